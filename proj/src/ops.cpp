#include "mimea/ops.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mimea/special.hpp"

namespace mimea {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shapes " << a.shape_str() << " and " << b.shape_str() << " do not match";
    throw std::invalid_argument(os.str());
  }
}

void require_positive_entries(const char* op, const Tensor& a) {
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) {
      if (!(a.at(i, j) > 0.0)) {
        std::ostringstream os;
        os << op << ": entry (" << i << "," << j << ") = " << a.at(i, j) << " is not positive";
        throw std::domain_error(os.str());
      }
    }
  }
}

int node_of(const Tensor& t) { return t.on_tape() ? t.node() : -1; }

std::vector<int> live_parents(std::initializer_list<int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id >= 0) out.push_back(id);
  }
  return out;
}

// Shared skeleton for entrywise unary ops: y = f(x), dx = g * df(x, y).
Tensor unary_elementwise(const Tensor& a, const std::function<double(double)>& f,
                         const std::function<double(double, double)>& df) {
  Tensor out(a.rows(), a.cols());
  const auto& x = a.values();
  auto& y = out.values();
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = f(x[k]);

  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    std::vector<double> xs = x;
    std::vector<double> ys = y;
    int id = tape->record(a.rows(), a.cols(), {pa},
                          [pa, xs = std::move(xs), ys = std::move(ys), df](
                              const std::vector<double>& g, Tape& t) {
                            std::vector<double> da(xs.size());
                            for (std::size_t k = 0; k < xs.size(); ++k) {
                              da[k] = g[k] * df(xs[k], ys[k]);
                            }
                            t.accumulate(pa, da);
                          });
    out.bind(tape, id);
  }
  return out;
}

// Shared skeleton for entrywise binary ops on equal shapes.
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b,
                          const std::function<double(double, double)>& f,
                          const std::function<double(double, double)>& dfa,
                          const std::function<double(double, double)>& dfb) {
  require_same_shape(op, a, b);
  Tensor out(a.rows(), a.cols());
  const auto& xa = a.values();
  const auto& xb = b.values();
  auto& y = out.values();
  for (std::size_t k = 0; k < xa.size(); ++k) y[k] = f(xa[k], xb[k]);

  Tape* tape = common_tape({&a, &b});
  if (tape != nullptr) {
    const int pa = node_of(a);
    const int pb = node_of(b);
    std::vector<double> va = xa;
    std::vector<double> vb = xb;
    int id = tape->record(a.rows(), a.cols(), live_parents({pa, pb}),
                          [pa, pb, va = std::move(va), vb = std::move(vb), dfa, dfb](
                              const std::vector<double>& g, Tape& t) {
                            if (pa >= 0) {
                              std::vector<double> da(va.size());
                              for (std::size_t k = 0; k < va.size(); ++k) {
                                da[k] = g[k] * dfa(va[k], vb[k]);
                              }
                              t.accumulate(pa, da);
                            }
                            if (pb >= 0) {
                              std::vector<double> db(va.size());
                              for (std::size_t k = 0; k < va.size(); ++k) {
                                db[k] = g[k] * dfb(va[k], vb[k]);
                              }
                              t.accumulate(pb, db);
                            }
                          });
    out.bind(tape, id);
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: inner dimensions disagree, " << a.shape_str() << " * " << b.shape_str();
    throw std::invalid_argument(os.str());
  }
  const int n = a.rows(), m = a.cols(), k = b.cols();
  Tensor out(n, k);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& y = out.values();
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < m; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * m + p];
      if (aip == 0.0) continue;
      const std::size_t brow = static_cast<std::size_t>(p) * k;
      const std::size_t orow = static_cast<std::size_t>(i) * k;
      for (int j = 0; j < k; ++j) y[orow + j] += aip * bv[brow + j];
    }
  }

  Tape* tape = common_tape({&a, &b});
  if (tape != nullptr) {
    const int pa = node_of(a);
    const int pb = node_of(b);
    std::vector<double> va = av;
    std::vector<double> vb = bv;
    int id = tape->record(
        n, k, live_parents({pa, pb}),
        [pa, pb, va = std::move(va), vb = std::move(vb), n, m, k](const std::vector<double>& g,
                                                                 Tape& t) {
          if (pa >= 0) {  // dA = g * B^T
            std::vector<double> da(static_cast<std::size_t>(n) * m, 0.0);
            for (int i = 0; i < n; ++i) {
              for (int p = 0; p < m; ++p) {
                double acc = 0.0;
                const std::size_t grow = static_cast<std::size_t>(i) * k;
                const std::size_t brow = static_cast<std::size_t>(p) * k;
                for (int j = 0; j < k; ++j) acc += g[grow + j] * vb[brow + j];
                da[static_cast<std::size_t>(i) * m + p] = acc;
              }
            }
            t.accumulate(pa, da);
          }
          if (pb >= 0) {  // dB = A^T * g
            std::vector<double> db(static_cast<std::size_t>(m) * k, 0.0);
            for (int i = 0; i < n; ++i) {
              const std::size_t arow = static_cast<std::size_t>(i) * m;
              const std::size_t grow = static_cast<std::size_t>(i) * k;
              for (int p = 0; p < m; ++p) {
                const double aip = va[arow + p];
                if (aip == 0.0) continue;
                const std::size_t drow = static_cast<std::size_t>(p) * k;
                for (int j = 0; j < k; ++j) db[drow + j] += aip * g[grow + j];
              }
            }
            t.accumulate(pb, db);
          }
        });
    out.bind(tape, id);
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  Tensor out(m, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    int id = tape->record(m, n, {pa}, [pa, n, m](const std::vector<double>& g, Tape& t) {
      std::vector<double> da(static_cast<std::size_t>(n) * m);
      for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
          da[static_cast<std::size_t>(i) * m + j] = g[static_cast<std::size_t>(j) * n + i];
        }
      }
      t.accumulate(pa, da);
    });
    out.bind(tape, id);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (int i = 0; i < b.rows(); ++i) {
    for (int j = 0; j < b.cols(); ++j) {
      if (b.at(i, j) == 0.0) {
        std::ostringstream os;
        os << "div: denominator entry (" << i << "," << j << ") is zero";
        throw std::domain_error(os.str());
      }
    }
  }
  return binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_elementwise(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_elementwise(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor exp_t(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  require_positive_entries("log", a);
  return unary_elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs_t(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor softplus_t(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return softplus(x); },
      [](double x, double) {
        if (x > 30.0) return 1.0;
        if (x < -30.0) return std::exp(x);
        return 1.0 / (1.0 + std::exp(-x));
      });
}

Tensor lgamma_t(const Tensor& a) {
  require_positive_entries("lgamma", a);
  return unary_elementwise(
      a, [](double x) { return log_gamma(x); }, [](double x, double) { return digamma(x); });
}

Tensor digamma_t(const Tensor& a) {
  require_positive_entries("digamma", a);
  return unary_elementwise(
      a, [](double x) { return digamma(x); }, [](double x, double) { return trigamma(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) {
    std::ostringstream os;
    os << "clamp: lo " << lo << " must be below hi " << hi;
    throw std::invalid_argument(os.str());
  }
  return unary_elementwise(
      a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw std::invalid_argument("scale_by: factor must be 1x1, got " + s.shape_str());
  }
  const double sv = s.at(0, 0);
  Tensor out(a.rows(), a.cols());
  const auto& x = a.values();
  auto& y = out.values();
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = sv * x[k];

  Tape* tape = common_tape({&a, &s});
  if (tape != nullptr) {
    const int pa = node_of(a);
    const int ps = node_of(s);
    std::vector<double> xs = x;
    int id = tape->record(a.rows(), a.cols(), live_parents({pa, ps}),
                          [pa, ps, sv, xs = std::move(xs)](const std::vector<double>& g, Tape& t) {
                            if (pa >= 0) {
                              std::vector<double> da(xs.size());
                              for (std::size_t k = 0; k < xs.size(); ++k) da[k] = g[k] * sv;
                              t.accumulate(pa, da);
                            }
                            if (ps >= 0) {
                              double acc = 0.0;
                              for (std::size_t k = 0; k < xs.size(); ++k) acc += g[k] * xs[k];
                              t.accumulate(ps, {acc});
                            }
                          });
    out.bind(tape, id);
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) {
    std::ostringstream os;
    os << "add_rowvec: vector " << v.shape_str() << " does not broadcast over " << a.shape_str();
    throw std::invalid_argument(os.str());
  }
  const int n = a.rows(), m = a.cols();
  Tensor out(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out.at(i, j) = a.at(i, j) + v.at(0, j);
  }
  Tape* tape = common_tape({&a, &v});
  if (tape != nullptr) {
    const int pa = node_of(a);
    const int pv = node_of(v);
    int id = tape->record(n, m, live_parents({pa, pv}),
                          [pa, pv, n, m](const std::vector<double>& g, Tape& t) {
                            if (pa >= 0) t.accumulate(pa, g);
                            if (pv >= 0) {
                              std::vector<double> dv(m, 0.0);
                              for (int i = 0; i < n; ++i) {
                                for (int j = 0; j < m; ++j) {
                                  dv[j] += g[static_cast<std::size_t>(i) * m + j];
                                }
                              }
                              t.accumulate(pv, dv);
                            }
                          });
    out.bind(tape, id);
  }
  return out;
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) {
    std::ostringstream os;
    os << "mul_rowvec: vector " << v.shape_str() << " does not broadcast over " << a.shape_str();
    throw std::invalid_argument(os.str());
  }
  const int n = a.rows(), m = a.cols();
  Tensor out(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out.at(i, j) = a.at(i, j) * v.at(0, j);
  }
  Tape* tape = common_tape({&a, &v});
  if (tape != nullptr) {
    const int pa = node_of(a);
    const int pv = node_of(v);
    std::vector<double> va = a.values();
    std::vector<double> vv = v.values();
    int id = tape->record(n, m, live_parents({pa, pv}),
                          [pa, pv, n, m, va = std::move(va), vv = std::move(vv)](
                              const std::vector<double>& g, Tape& t) {
                            if (pa >= 0) {
                              std::vector<double> da(va.size());
                              for (int i = 0; i < n; ++i) {
                                for (int j = 0; j < m; ++j) {
                                  const std::size_t k = static_cast<std::size_t>(i) * m + j;
                                  da[k] = g[k] * vv[j];
                                }
                              }
                              t.accumulate(pa, da);
                            }
                            if (pv >= 0) {
                              std::vector<double> dv(m, 0.0);
                              for (int i = 0; i < n; ++i) {
                                for (int j = 0; j < m; ++j) {
                                  const std::size_t k = static_cast<std::size_t>(i) * m + j;
                                  dv[j] += g[k] * va[k];
                                }
                              }
                              t.accumulate(pv, dv);
                            }
                          });
    out.bind(tape, id);
  }
  return out;
}

Tensor outer_sum(const Tensor& u, const Tensor& v) {
  if (u.cols() != 1 || v.cols() != 1) {
    std::ostringstream os;
    os << "outer_sum: expects column vectors, got " << u.shape_str() << " and " << v.shape_str();
    throw std::invalid_argument(os.str());
  }
  const int n = u.rows(), m = v.rows();
  Tensor out(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out.at(i, j) = u.at(i, 0) + v.at(j, 0);
  }
  Tape* tape = common_tape({&u, &v});
  if (tape != nullptr) {
    const int pu = node_of(u);
    const int pv = node_of(v);
    int id = tape->record(n, m, live_parents({pu, pv}),
                          [pu, pv, n, m](const std::vector<double>& g, Tape& t) {
                            if (pu >= 0) {
                              std::vector<double> du(n, 0.0);
                              for (int i = 0; i < n; ++i) {
                                for (int j = 0; j < m; ++j) {
                                  du[i] += g[static_cast<std::size_t>(i) * m + j];
                                }
                              }
                              t.accumulate(pu, du);
                            }
                            if (pv >= 0) {
                              std::vector<double> dv(m, 0.0);
                              for (int i = 0; i < n; ++i) {
                                for (int j = 0; j < m; ++j) {
                                  dv[j] += g[static_cast<std::size_t>(i) * m + j];
                                }
                              }
                              t.accumulate(pv, dv);
                            }
                          });
    out.bind(tape, id);
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor out = Tensor::scalar(acc);
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    const std::size_t sz = a.values().size();
    int id = tape->record(1, 1, {pa}, [pa, sz](const std::vector<double>& g, Tape& t) {
      t.accumulate(pa, std::vector<double>(sz, g[0]));
    });
    out.bind(tape, id);
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / a.size();
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor out = Tensor::scalar(acc * inv);
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    const std::size_t sz = a.values().size();
    int id = tape->record(1, 1, {pa}, [pa, sz, inv](const std::vector<double>& g, Tape& t) {
      t.accumulate(pa, std::vector<double>(sz, g[0] * inv));
    });
    out.bind(tape, id);
  }
  return out;
}

Tensor col_mean(const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  const double inv = 1.0 / n;
  Tensor out(1, m);
  for (int j = 0; j < m; ++j) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a.at(i, j);
    out.at(0, j) = acc * inv;
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    int id = tape->record(1, m, {pa}, [pa, n, m, inv](const std::vector<double>& g, Tape& t) {
      std::vector<double> da(static_cast<std::size_t>(n) * m);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) da[static_cast<std::size_t>(i) * m + j] = g[j] * inv;
      }
      t.accumulate(pa, da);
    });
    out.bind(tape, id);
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) {
    std::ostringstream os;
    os << "slice_cols: range [" << c0 << "," << c1 << ") invalid for " << a.shape_str();
    throw std::invalid_argument(os.str());
  }
  const int n = a.rows(), w = c1 - c0, m = a.cols();
  Tensor out(n, w);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w; ++j) out.at(i, j) = a.at(i, c0 + j);
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    int id = tape->record(n, w, {pa}, [pa, n, w, m, c0](const std::vector<double>& g, Tape& t) {
      std::vector<double> da(static_cast<std::size_t>(n) * m, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < w; ++j) {
          da[static_cast<std::size_t>(i) * m + c0 + j] = g[static_cast<std::size_t>(i) * w + j];
        }
      }
      t.accumulate(pa, da);
    });
    out.bind(tape, id);
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: needs at least one part");
  const int n = parts.front().rows();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != n) {
      std::ostringstream os;
      os << "concat_cols: row counts differ, " << parts.front().shape_str() << " vs "
         << p.shape_str();
      throw std::invalid_argument(os.str());
    }
    total += p.cols();
  }
  Tensor out(n, total);
  int off = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    }
    off += p.cols();
  }

  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    Tape* pt = common_tape({&p});
    if (pt == nullptr) continue;
    if (tape == nullptr) {
      tape = pt;
    } else if (tape != pt) {
      throw std::logic_error("operation mixes tensors from two different tapes");
    }
  }
  if (tape != nullptr) {
    std::vector<int> ids;       // live parent nodes in order
    std::vector<int> offsets;   // column offset per part
    std::vector<int> widths;    // column count per part
    std::vector<int> part_ids;  // node id (or -1) per part
    off = 0;
    for (const Tensor& p : parts) {
      part_ids.push_back(node_of(p));
      offsets.push_back(off);
      widths.push_back(p.cols());
      if (p.on_tape()) ids.push_back(p.node());
      off += p.cols();
    }
    int id = tape->record(
        n, total, ids,
        [part_ids, offsets, widths, n, total](const std::vector<double>& g, Tape& t) {
          for (std::size_t s = 0; s < part_ids.size(); ++s) {
            if (part_ids[s] < 0) continue;
            const int w = widths[s], c0 = offsets[s];
            std::vector<double> dp(static_cast<std::size_t>(n) * w);
            for (int i = 0; i < n; ++i) {
              for (int j = 0; j < w; ++j) {
                dp[static_cast<std::size_t>(i) * w + j] =
                    g[static_cast<std::size_t>(i) * total + c0 + j];
              }
            }
            t.accumulate(part_ids[s], dp);
          }
        });
    out.bind(tape, id);
  }
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  if (idx.empty()) throw std::invalid_argument("gather_rows: empty index list");
  for (int i : idx) {
    if (i < 0 || i >= a.rows()) {
      std::ostringstream os;
      os << "gather_rows: index " << i << " out of range for " << a.shape_str();
      throw std::invalid_argument(os.str());
    }
  }
  const int n = static_cast<int>(idx.size()), m = a.cols();
  Tensor out(n, m);
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < m; ++j) out.at(r, j) = a.at(idx[r], j);
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    const int src_rows = a.rows();
    std::vector<int> ix = idx;
    int id = tape->record(n, m, {pa},
                          [pa, ix = std::move(ix), src_rows, m](const std::vector<double>& g,
                                                                Tape& t) {
                            std::vector<double> da(static_cast<std::size_t>(src_rows) * m, 0.0);
                            for (std::size_t r = 0; r < ix.size(); ++r) {
                              for (int j = 0; j < m; ++j) {
                                da[static_cast<std::size_t>(ix[r]) * m + j] += g[r * m + j];
                              }
                            }
                            t.accumulate(pa, da);
                          });
    out.bind(tape, id);
  }
  return out;
}

Tensor rowwise_softmax(const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  Tensor out(n, m);
  for (int i = 0; i < n; ++i) {
    double mx = a.at(i, 0);
    for (int j = 1; j < m; ++j) mx = std::max(mx, a.at(i, j));
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      const double e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    std::vector<double> ys = out.values();
    int id = tape->record(n, m, {pa},
                          [pa, ys = std::move(ys), n, m](const std::vector<double>& g, Tape& t) {
                            std::vector<double> da(ys.size());
                            for (int i = 0; i < n; ++i) {
                              const std::size_t row = static_cast<std::size_t>(i) * m;
                              double dot = 0.0;
                              for (int j = 0; j < m; ++j) dot += g[row + j] * ys[row + j];
                              for (int j = 0; j < m; ++j) {
                                da[row + j] = ys[row + j] * (g[row + j] - dot);
                              }
                            }
                            t.accumulate(pa, da);
                          });
    out.bind(tape, id);
  }
  return out;
}

Tensor masked_rowwise_softmax(const Tensor& a, const Tensor& mask) {
  require_same_shape("masked_rowwise_softmax", a, mask);
  const int n = a.rows(), m = a.cols();
  Tensor out(n, m);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      if (mask.at(i, j) != 0.0) mx = std::max(mx, a.at(i, j));
    }
    if (!std::isfinite(mx)) {
      std::ostringstream os;
      os << "masked_rowwise_softmax: row " << i << " has an all-zero mask";
      throw std::invalid_argument(os.str());
    }
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      if (mask.at(i, j) != 0.0) {
        const double e = std::exp(a.at(i, j) - mx);
        out.at(i, j) = e;
        z += e;
      }
    }
    for (int j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    std::vector<double> ys = out.values();
    int id = tape->record(n, m, {pa},
                          [pa, ys = std::move(ys), n, m](const std::vector<double>& g, Tape& t) {
                            std::vector<double> da(ys.size());
                            for (int i = 0; i < n; ++i) {
                              const std::size_t row = static_cast<std::size_t>(i) * m;
                              double dot = 0.0;
                              for (int j = 0; j < m; ++j) dot += g[row + j] * ys[row + j];
                              for (int j = 0; j < m; ++j) {
                                da[row + j] = ys[row + j] * (g[row + j] - dot);
                              }
                            }
                            t.accumulate(pa, da);
                          });
    out.bind(tape, id);
  }
  return out;
}

namespace {

Tensor l2_normalize_impl(const Tensor& a, bool strict) {
  const int n = a.rows(), m = a.cols();
  Tensor out(n, m);
  std::vector<double> norms(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j) acc += a.at(i, j) * a.at(i, j);
    const double nrm = std::sqrt(acc);
    if (nrm == 0.0) {
      if (strict) {
        std::ostringstream os;
        os << "l2_normalize_rows: row " << i << " has zero norm";
        throw std::domain_error(os.str());
      }
      norms[i] = 0.0;
      continue;  // row stays zero
    }
    norms[i] = nrm;
    for (int j = 0; j < m; ++j) out.at(i, j) = a.at(i, j) / nrm;
  }
  Tape* tape = common_tape({&a});
  if (tape != nullptr) {
    const int pa = a.node();
    std::vector<double> ys = out.values();
    std::vector<double> ns = norms;
    int id = tape->record(n, m, {pa},
                          [pa, ys = std::move(ys), ns = std::move(ns), n, m](
                              const std::vector<double>& g, Tape& t) {
                            std::vector<double> da(ys.size(), 0.0);
                            for (int i = 0; i < n; ++i) {
                              if (ns[i] == 0.0) continue;
                              const std::size_t row = static_cast<std::size_t>(i) * m;
                              double dot = 0.0;
                              for (int j = 0; j < m; ++j) dot += g[row + j] * ys[row + j];
                              for (int j = 0; j < m; ++j) {
                                da[row + j] = (g[row + j] - ys[row + j] * dot) / ns[i];
                              }
                            }
                            t.accumulate(pa, da);
                          });
    out.bind(tape, id);
  }
  return out;
}

}  // namespace

Tensor l2_normalize_rows(const Tensor& a) { return l2_normalize_impl(a, true); }

Tensor l2_normalize_rows_safe(const Tensor& a) { return l2_normalize_impl(a, false); }

Tensor info_nce_dir(const Tensor& cross, const Tensor& inner, double gamma) {
  require_same_shape("info_nce_dir", cross, inner);
  const int n = cross.rows();
  if (cross.cols() != n) {
    throw std::invalid_argument("info_nce_dir: expects square inputs, got " + cross.shape_str());
  }
  if (n < 2) {
    throw std::invalid_argument("info_nce_dir: needs at least two pairs in the batch");
  }
  if (gamma < 0.0) {
    std::ostringstream os;
    os << "info_nce_dir: gamma " << gamma << " must be nonnegative";
    throw std::invalid_argument(os.str());
  }

  // Row i: lse over {cross[i][*]} plus gamma-weighted {inner[i][j != i]}.
  std::vector<double> lse(n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = cross.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, cross.at(i, j));
    if (gamma > 0.0) {
      for (int j = 0; j < n; ++j) {
        if (j != i) mx = std::max(mx, inner.at(i, j));
      }
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(cross.at(i, j) - mx);
    if (gamma > 0.0) {
      for (int j = 0; j < n; ++j) {
        if (j != i) z += gamma * std::exp(inner.at(i, j) - mx);
      }
    }
    lse[i] = mx + std::log(z);
    loss += lse[i] - cross.at(i, i);
  }
  loss /= n;
  Tensor out = Tensor::scalar(loss);

  Tape* tape = common_tape({&cross, &inner});
  if (tape != nullptr) {
    const int pc = node_of(cross);
    const int pi = node_of(inner);
    std::vector<double> cv = cross.values();
    std::vector<double> iv = inner.values();
    int id = tape->record(
        1, 1, live_parents({pc, pi}),
        [pc, pi, cv = std::move(cv), iv = std::move(iv), lse = std::move(lse), n, gamma](
            const std::vector<double>& g, Tape& t) {
          const double s = g[0] / n;
          if (pc >= 0) {
            std::vector<double> dc(cv.size());
            for (int i = 0; i < n; ++i) {
              for (int j = 0; j < n; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * n + j;
                double p = std::exp(cv[k] - lse[i]);
                if (j == i) p -= 1.0;
                dc[k] = s * p;
              }
            }
            t.accumulate(pc, dc);
          }
          if (pi >= 0 && gamma > 0.0) {
            std::vector<double> di(iv.size(), 0.0);
            for (int i = 0; i < n; ++i) {
              for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                const std::size_t k = static_cast<std::size_t>(i) * n + j;
                di[k] = s * gamma * std::exp(iv[k] - lse[i]);
              }
            }
            t.accumulate(pi, di);
          }
        });
    out.bind(tape, id);
  }
  return out;
}

}  // namespace mimea
