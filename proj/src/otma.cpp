#include "mimea/otma.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mimea/errors.hpp"
#include "mimea/ops.hpp"

namespace mimea {

namespace {

std::vector<double> row_norms(const Tensor& t, const char* side) {
  std::vector<double> norms(static_cast<std::size_t>(t.rows()));
  for (int i = 0; i < t.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < t.cols(); ++j) acc += t.at(i, j) * t.at(i, j);
    norms[static_cast<std::size_t>(i)] = std::sqrt(acc);
    if (norms[static_cast<std::size_t>(i)] == 0.0) {
      throw std::domain_error(std::string("cosine_cost: row ") + std::to_string(i) + " of " +
                              side + " has zero norm");
    }
  }
  return norms;
}

}  // namespace

Tensor cosine_cost(const Tensor& x, const Tensor& y) {
  if (x.cols() != y.cols()) {
    throw std::invalid_argument("cosine_cost: dimension mismatch, " + std::to_string(x.cols()) +
                                " vs " + std::to_string(y.cols()));
  }
  const std::vector<double> nx = row_norms(x, "X");
  const std::vector<double> ny = row_norms(y, "Y");
  Tensor c(x.rows(), y.rows());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < y.rows(); ++j) {
      double dot = 0.0;
      for (int k = 0; k < x.cols(); ++k) dot += x.at(i, k) * y.at(j, k);
      const double d = 1.0 - dot / (nx[static_cast<std::size_t>(i)] * ny[static_cast<std::size_t>(j)]);
      c.at(i, j) = std::min(2.0, std::max(0.0, d));
    }
  }
  return c;
}

TransportPlan sinkhorn(const TransportProblem& prob, int max_iters, double tol) {
  if (!(prob.epsilon > 0.0)) {
    throw std::invalid_argument("sinkhorn: epsilon must be positive, got " +
                                std::to_string(prob.epsilon));
  }
  if (max_iters < 1) {
    throw std::invalid_argument("sinkhorn: max_iters must be at least 1");
  }
  const Tensor& c = prob.cost;
  const int nr = c.rows();
  const int nm = c.cols();
  const double eps = prob.epsilon;
  const double ln_a = -std::log(static_cast<double>(nr));
  const double ln_b = -std::log(static_cast<double>(nm));

  std::vector<double> f(static_cast<std::size_t>(nr), 0.0);
  std::vector<double> g(static_cast<std::size_t>(nm), 0.0);
  auto lse_over_cols = [&](int i) {
    double mx = -1e300;
    for (int j = 0; j < nm; ++j) mx = std::max(mx, (g[static_cast<std::size_t>(j)] - c.at(i, j)) / eps);
    double acc = 0.0;
    for (int j = 0; j < nm; ++j) acc += std::exp((g[static_cast<std::size_t>(j)] - c.at(i, j)) / eps - mx);
    return mx + std::log(acc);
  };
  auto lse_over_rows = [&](int j) {
    double mx = -1e300;
    for (int i = 0; i < nr; ++i) mx = std::max(mx, (f[static_cast<std::size_t>(i)] - c.at(i, j)) / eps);
    double acc = 0.0;
    for (int i = 0; i < nr; ++i) acc += std::exp((f[static_cast<std::size_t>(i)] - c.at(i, j)) / eps - mx);
    return mx + std::log(acc);
  };

  TransportPlan plan;
  plan.t = Tensor(nr, nm);
  for (int it = 1; it <= max_iters; ++it) {
    for (int i = 0; i < nr; ++i) f[static_cast<std::size_t>(i)] = eps * (ln_a - lse_over_cols(i));
    for (int j = 0; j < nm; ++j) g[static_cast<std::size_t>(j)] = eps * (ln_b - lse_over_rows(j));

    for (int i = 0; i < nr; ++i) {
      for (int j = 0; j < nm; ++j) {
        plan.t.at(i, j) =
            std::exp((f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] - c.at(i, j)) / eps);
      }
    }
    double err = 0.0;
    for (int i = 0; i < nr; ++i) {
      double rs = 0.0;
      for (int j = 0; j < nm; ++j) rs += plan.t.at(i, j);
      err = std::max(err, std::fabs(rs - 1.0 / nr));
    }
    for (int j = 0; j < nm; ++j) {
      double cs = 0.0;
      for (int i = 0; i < nr; ++i) cs += plan.t.at(i, j);
      err = std::max(err, std::fabs(cs - 1.0 / nm));
    }
    plan.iterations_used = it;
    plan.marginal_error = err;
    if (err < tol) {
      plan.converged = true;
      break;
    }
  }
  return plan;
}

Tensor translate(const Tensor& h_uni, const TransportPlan& plan) {
  if (plan.t.rows() != h_uni.rows()) {
    throw std::invalid_argument("translate: plan has " + std::to_string(plan.t.rows()) +
                                " source rows but the embedding has " +
                                std::to_string(h_uni.rows()));
  }
  return scale(matmul(transpose(plan.t.detached()), h_uni), static_cast<double>(plan.t.cols()));
}

OtConsume parse_consume(const std::string& name) {
  if (name == "replace") return OtConsume::kReplace;
  if (name == "average") return OtConsume::kAverage;
  if (name == "off") return OtConsume::kOff;
  throw ConfigError("otma.consume: unknown mode '" + name + "'");
}

std::string to_string(OtConsume c) {
  switch (c) {
    case OtConsume::kReplace: return "replace";
    case OtConsume::kAverage: return "average";
    case OtConsume::kOff: return "off";
  }
  return "?";
}

OtmaResult otma_all(const ModalEmbeddings& embeds, const Tensor& h_m, const Tensor& proj,
                    const OtmaConfig& cfg) {
  if (h_m.rows() != embeds.s.rows()) {
    throw std::invalid_argument("otma_all: fused embedding has " + std::to_string(h_m.rows()) +
                                " rows but the modal embeddings have " +
                                std::to_string(embeds.s.rows()));
  }
  if (proj.rows() != h_m.cols() || proj.cols() != embeds.s.cols()) {
    throw std::invalid_argument("otma_all: projection is " + std::to_string(proj.rows()) + "x" +
                                std::to_string(proj.cols()) + ", expected " +
                                std::to_string(h_m.cols()) + "x" +
                                std::to_string(embeds.s.cols()));
  }
  Tensor target = matmul(h_m.detached(), proj.detached());

  OtmaResult out;
  auto align = [&](const Tensor& h_uni, TransportPlan& plan_out) {
    Tensor cost = cosine_cost(h_uni.detached(), target);
    plan_out = sinkhorn(TransportProblem{cost, cfg.epsilon}, cfg.max_iters, cfg.tol);
    return translate(h_uni, plan_out);
  };
  out.p_r = align(embeds.r, out.plan_r);
  out.p_a = align(embeds.a, out.plan_a);
  out.p_v = align(embeds.v, out.plan_v);
  return out;
}

}  // namespace mimea
