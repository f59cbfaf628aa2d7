#include "mimea/pmf.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mimea/errors.hpp"
#include "mimea/ops.hpp"
#include "mimea/special.hpp"

namespace mimea {

namespace {

constexpr double kScaleFloor = 1e-4;

bool needs_positive_first_half(Distribution dist) {
  return dist == Distribution::kBeta || dist == Distribution::kGamma;
}

}  // namespace

Distribution parse_distribution(const std::string& name) {
  if (name == "beta") return Distribution::kBeta;
  if (name == "cauchy") return Distribution::kCauchy;
  if (name == "gamma") return Distribution::kGamma;
  if (name == "gumbel") return Distribution::kGumbel;
  if (name == "laplace") return Distribution::kLaplace;
  throw ConfigError("pmf.distribution: unknown family '" + name + "'");
}

KlAgg parse_kl_agg(const std::string& name) {
  if (name == "mean_clamped") return KlAgg::kMeanClamped;
  if (name == "raw_sum") return KlAgg::kRawSum;
  throw ConfigError("pmf.kl_agg: unknown mode '" + name + "'");
}

Pivot parse_pivot(const std::string& name) {
  if (name == "structural") return Pivot::kStructural;
  if (name == "relation") return Pivot::kRelation;
  if (name == "attribute") return Pivot::kAttribute;
  if (name == "visual") return Pivot::kVisual;
  throw ConfigError("pmf.pivot: unknown modality '" + name + "'");
}

std::string to_string(Distribution d) {
  switch (d) {
    case Distribution::kBeta: return "beta";
    case Distribution::kCauchy: return "cauchy";
    case Distribution::kGamma: return "gamma";
    case Distribution::kGumbel: return "gumbel";
    case Distribution::kLaplace: return "laplace";
  }
  return "?";
}

std::string to_string(Pivot p) {
  switch (p) {
    case Pivot::kStructural: return "structural";
    case Pivot::kRelation: return "relation";
    case Pivot::kAttribute: return "attribute";
    case Pivot::kVisual: return "visual";
  }
  return "?";
}

std::string to_string(KlAgg agg) {
  return agg == KlAgg::kMeanClamped ? "mean_clamped" : "raw_sum";
}

DistParams to_dist_params(const Tensor& h, Distribution dist) {
  if (h.cols() % 2 != 0) {
    throw ConfigError("to_dist_params: embedding width " + std::to_string(h.cols()) +
                      " is odd, cannot split into halves");
  }
  const int m = h.cols() / 2;
  Tensor first = slice_cols(h, 0, m);
  Tensor second = slice_cols(h, m, 2 * m);
  DistParams out;
  if (needs_positive_first_half(dist)) {
    out.a = add_scalar(softplus_t(first), kScaleFloor);
  } else {
    out.a = first;
  }
  out.b = add_scalar(softplus_t(second), kScaleFloor);
  return out;
}

DistParams to_beta(const Tensor& h) { return to_dist_params(h, Distribution::kBeta); }

double beta_kl(double alpha1, double beta1, double alpha2, double beta2) {
  return kl_scalar(Distribution::kBeta, alpha1, beta1, alpha2, beta2);
}

double kl_scalar(Distribution dist, double a1, double b1, double a2, double b2) {
  auto require_positive = [](const char* name, double v) {
    if (!(v > 0.0)) {
      throw std::domain_error(std::string("kl_scalar: ") + name + " = " + std::to_string(v) +
                              " must be positive");
    }
  };
  require_positive("scale/beta of p", b1);
  require_positive("scale/beta of q", b2);
  if (needs_positive_first_half(dist)) {
    require_positive("alpha of p", a1);
    require_positive("alpha of q", a2);
  }
  switch (dist) {
    case Distribution::kBeta:
      return log_beta(a2, b2) - log_beta(a1, b1) + (a1 - a2) * digamma(a1) +
             (b1 - b2) * digamma(b1) + (a2 - a1 + b2 - b1) * digamma(a1 + b1);
    case Distribution::kCauchy: {
      const double s = b1 + b2;
      const double dmu = a1 - a2;
      return std::log((s * s + dmu * dmu) / (4.0 * b1 * b2));
    }
    case Distribution::kGamma:
      return (a1 - a2) * digamma(a1) - log_gamma(a1) + log_gamma(a2) +
             a2 * (std::log(b1) - std::log(b2)) + a1 * (b2 - b1) / b1;
    case Distribution::kGumbel: {
      const double r = b1 / b2;
      return std::log(b2 / b1) + kEulerMascheroni * (r - 1.0) + (a1 - a2) / b2 +
             std::exp((a2 - a1) / b2 + log_gamma(1.0 + r)) - 1.0;
    }
    case Distribution::kLaplace: {
      const double dmu = std::abs(a1 - a2);
      return std::log(b2 / b1) + (b1 * std::exp(-dmu / b1) + dmu) / b2 - 1.0;
    }
  }
  throw std::invalid_argument("kl_scalar: unknown distribution");
}

Tensor kl_elementwise(Distribution dist, const DistParams& p, const DistParams& q) {
  const Tensor& a1 = p.a;
  const Tensor& b1 = p.b;
  const Tensor& a2 = q.a;
  const Tensor& b2 = q.b;
  if (a1.rows() != a2.rows() || a1.cols() != a2.cols()) {
    throw std::invalid_argument("kl_elementwise: parameter shapes differ, " +
                                std::to_string(a1.rows()) + "x" + std::to_string(a1.cols()) +
                                " vs " + std::to_string(a2.rows()) + "x" +
                                std::to_string(a2.cols()));
  }
  switch (dist) {
    case Distribution::kBeta: {
      auto log_beta_t = [](const Tensor& a, const Tensor& b) {
        return sub(add(lgamma_t(a), lgamma_t(b)), lgamma_t(add(a, b)));
      };
      Tensor t1 = sub(log_beta_t(a2, b2), log_beta_t(a1, b1));
      Tensor t2 = mul(sub(a1, a2), digamma_t(a1));
      Tensor t3 = mul(sub(b1, b2), digamma_t(b1));
      Tensor t4 = mul(add(sub(a2, a1), sub(b2, b1)), digamma_t(add(a1, b1)));
      return add(add(t1, t2), add(t3, t4));
    }
    case Distribution::kCauchy: {
      Tensor s = add(b1, b2);
      Tensor dmu = sub(a1, a2);
      Tensor num = add(mul(s, s), mul(dmu, dmu));
      Tensor den = scale(mul(b1, b2), 4.0);
      return log_t(div(num, den));
    }
    case Distribution::kGamma: {
      Tensor t1 = mul(sub(a1, a2), digamma_t(a1));
      Tensor t2 = sub(lgamma_t(a2), lgamma_t(a1));
      Tensor t3 = mul(a2, sub(log_t(b1), log_t(b2)));
      Tensor t4 = mul(a1, div(sub(b2, b1), b1));
      return add(add(t1, t2), add(t3, t4));
    }
    case Distribution::kGumbel: {
      Tensor r = div(b1, b2);
      Tensor t1 = sub(log_t(b2), log_t(b1));
      Tensor t2 = scale(add_scalar(r, -1.0), kEulerMascheroni);
      Tensor t3 = div(sub(a1, a2), b2);
      Tensor t4 = exp_t(add(div(sub(a2, a1), b2), lgamma_t(add_scalar(r, 1.0))));
      return add_scalar(add(add(t1, t2), add(t3, t4)), -1.0);
    }
    case Distribution::kLaplace: {
      Tensor dmu = abs_t(sub(a1, a2));
      Tensor t1 = sub(log_t(b2), log_t(b1));
      Tensor decay = mul(b1, exp_t(neg(div(dmu, b1))));
      Tensor t2 = div(add(decay, dmu), b2);
      return add_scalar(add(t1, t2), -1.0);
    }
  }
  throw std::invalid_argument("kl_elementwise: unknown distribution");
}

double modal_weight(double delta, double lambda) {
  const double t = 2.0 - delta;
  return lambda * t * t;
}

FuseResult fuse(const ModalEmbeddings& embeds, const PmfConfig& cfg) {
  const std::array<const Tensor*, 4> mods = {&embeds.s, &embeds.r, &embeds.a, &embeds.v};
  const int n = embeds.s.rows();
  const int d = embeds.s.cols();
  for (const Tensor* t : mods) {
    if (t->rows() != n || t->cols() != d) {
      throw std::invalid_argument("fuse: modal embeddings disagree on shape, expected " +
                                  std::to_string(n) + "x" + std::to_string(d) + ", got " +
                                  std::to_string(t->rows()) + "x" + std::to_string(t->cols()));
    }
  }
  int pivot = static_cast<int>(cfg.pivot);
  if (!cfg.active[pivot]) {
    pivot = -1;
    for (int k = 0; k < 4; ++k) {
      if (cfg.active[k]) {
        pivot = k;
        break;
      }
    }
    if (pivot < 0) throw ConfigError("fuse: every modality is ablated");
  }
  const int m = d / 2;  // to_dist_params validates evenness

  // With detach_weights the whole weight computation runs on detached
  // copies, so the coefficients enter the output as constants.
  std::array<Tensor, 4> weight_src;
  for (int k = 0; k < 4; ++k) {
    weight_src[k] = cfg.detach_weights ? mods[k]->detached() : *mods[k];
  }
  DistParams pivot_params = to_dist_params(weight_src[pivot], cfg.distribution);

  std::vector<Tensor> raw_w;  // 1x1 each, active non-pivot modalities in s,r,a,v order
  FuseResult out;
  out.weights.pivot = static_cast<Pivot>(pivot);
  int slot = 0;
  for (int k = 0; k < 4; ++k) {
    if (k == pivot) continue;
    if (!cfg.active[k]) {
      out.weights.raw[slot++] = 0.0;
      continue;
    }
    DistParams pk = to_dist_params(weight_src[k], cfg.distribution);
    Tensor kl = kl_elementwise(cfg.distribution, pk, pivot_params);
    Tensor delta = cfg.kl_agg == KlAgg::kMeanClamped ? clamp(mean(kl), 0.0, 2.0)
                                                     : scale(mean(kl), static_cast<double>(m));
    Tensor two_minus = add_scalar(neg(delta), 2.0);
    Tensor w = scale(mul(two_minus, two_minus), cfg.lambda);
    out.weights.raw[slot++] = w.item();
    raw_w.push_back(w);
  }

  Tensor shares;
  if (!raw_w.empty()) shares = rowwise_softmax(add_scalar(concat_cols(raw_w), 1.0));

  std::vector<Tensor> parts;
  parts.reserve(4);
  int share_idx = 0;
  for (int k = 0; k < 4; ++k) {
    if (k == pivot) {
      out.weights.coeffs[k] = 1.0;
      parts.push_back(*mods[k]);
    } else if (!cfg.active[k]) {
      out.weights.coeffs[k] = 0.0;
      parts.push_back(Tensor::zeros(n, d));
    } else {
      Tensor c = slice_cols(shares, share_idx, share_idx + 1);
      out.weights.coeffs[k] = c.item();
      parts.push_back(scale_by(*mods[k], c));
      ++share_idx;
    }
  }
  out.h_m = concat_cols(parts);
  return out;
}

}  // namespace mimea
