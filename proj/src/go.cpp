#include "uwbseq/go.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include "uwbseq/csv.hpp"

namespace uwbseq::go {

void GoConfig::validate() const {
  if (window_frames < 2) throw std::invalid_argument("go: window_frames must be at least 2");
  if (!(huber_delta > 0.0)) throw std::invalid_argument("go: huber_delta must be positive");
  if (max_iters <= 0) throw std::invalid_argument("go: max_iters must be positive");
  if (!(motion_sigma > 0.0) || !(link_sigma > 0.0)) throw std::invalid_argument("go: sigmas must be positive");
  if (!(lm_lambda0 > 0.0)) throw std::invalid_argument("go: lm_lambda0 must be positive");
}

double residual(const Vec3& position, double measured, const AnchorParams& anchor) {
  return measured - range_model(position, anchor);
}

ResidualJacobian residual_jacobian(const Vec3& position, const AnchorParams& anchor) {
  ResidualJacobian j;
  const Vec3 d = position - anchor.position;
  const double n = d.norm();
  if (n <= 1e-6) {
    j.singular = true;
    return j;
  }
  j.gradient = -anchor.scale * d.transpose() / n;
  return j;
}

double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

double huber_rho(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

namespace {

struct Range {
  std::size_t var;  // offset of the tag position in the state vector
  double measured;
  std::size_t anchor;
};

class Problem {
public:
  Problem(const WindowProblem& p, const GoConfig& c, double link_sigma)
      : p_(p), c_(c), link_sigma_(link_sigma), n_tags_(p.layout.tag_ids.size()) {
    std::set<std::size_t> heard;
    for (std::size_t k = 0; k < p.count; ++k) {
      const auto& values = (*p.frames)[p.first + k].values;
      for (std::size_t i = 0; i < n_tags_; ++i)
        for (std::size_t a = 0; a < p.layout.anchor_ids.size(); ++a) {
          const int s = p.layout.slot(p.layout.tag_ids[i], p.layout.anchor_ids[a]);
          const double v = values[static_cast<std::size_t>(s)];
          if (v > 0.0) {
            ranges_.push_back({var(k, i), v, a});
            heard.insert(a);
          }
        }
    }
    distinct_anchors_ = heard.size();
    for (std::size_t i = 0; i + 1 < n_tags_; ++i)
      baselines_.push_back((p.mounts[i].body_offset - p.mounts[i + 1].body_offset).norm());
  }

  std::size_t size() const { return p_.count * n_tags_ * 3; }
  std::size_t var(std::size_t k, std::size_t i) const { return (k * n_tags_ + i) * 3; }
  bool empty() const { return ranges_.empty(); }
  std::size_t distinct_anchors() const { return distinct_anchors_; }

  // Robust cost; with H/g non-null also the IRLS normal equations.
  double evaluate(const Eigen::VectorXd& x, Eigen::MatrixXd* h, Eigen::VectorXd* g) const {
    if (h) {
      h->setZero(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(size()));
      g->setZero(static_cast<Eigen::Index>(size()));
    }
    double cost = 0.0;
    for (const auto& r : ranges_) {
      const Vec3 pos = x.segment<3>(static_cast<Eigen::Index>(r.var));
      const auto& anchor = p_.anchors[r.anchor];
      const double e = residual(pos, r.measured, anchor);
      cost += huber_rho(e, c_.huber_delta);
      if (!h) continue;
      const auto jac = residual_jacobian(pos, anchor);
      if (jac.singular) continue;
      const double w = huber_weight(e, c_.huber_delta);
      const auto at = static_cast<Eigen::Index>(r.var);
      h->block<3, 3>(at, at) += w * jac.gradient.transpose() * jac.gradient;
      g->segment<3>(at) += w * jac.gradient.transpose() * e;
    }
    const double coef[3] = {1.0 / c_.motion_sigma, -2.0 / c_.motion_sigma, 1.0 / c_.motion_sigma};
    for (std::size_t k = 1; k + 1 < p_.count; ++k)
      for (std::size_t i = 0; i < n_tags_; ++i) {
        Eigen::Index at[3];
        Vec3 m = Vec3::Zero();
        for (int q = 0; q < 3; ++q) {
          at[q] = static_cast<Eigen::Index>(var(k - 1 + static_cast<std::size_t>(q), i));
          m += coef[q] * x.segment<3>(at[q]);
        }
        cost += 0.5 * m.squaredNorm();
        if (!h) continue;
        for (int a = 0; a < 3; ++a) {
          g->segment<3>(at[a]) += coef[a] * m;
          for (int b = 0; b < 3; ++b) h->block<3, 3>(at[a], at[b]).diagonal().array() += coef[a] * coef[b];
        }
      }
    for (std::size_t k = 0; k < p_.count; ++k)
      for (std::size_t i = 0; i + 1 < n_tags_; ++i) {
        const auto ai = static_cast<Eigen::Index>(var(k, i)), aj = static_cast<Eigen::Index>(var(k, i + 1));
        const Vec3 d = x.segment<3>(ai) - x.segment<3>(aj);
        const double n = d.norm();
        const double l = (n - baselines_[i]) / link_sigma_;
        cost += 0.5 * l * l;
        if (!h || n < 1e-9) continue;
        const Vec3 j = d / (n * link_sigma_);
        const Eigen::Matrix3d jj = j * j.transpose();
        h->block<3, 3>(ai, ai) += jj;
        h->block<3, 3>(aj, aj) += jj;
        h->block<3, 3>(ai, aj) -= jj;
        h->block<3, 3>(aj, ai) -= jj;
        g->segment<3>(ai) += j * l;
        g->segment<3>(aj) -= j * l;
      }
    return cost;
  }

private:
  const WindowProblem& p_;
  const GoConfig& c_;
  double link_sigma_;
  std::size_t n_tags_;
  std::vector<Range> ranges_;
  std::vector<double> baselines_;
  std::size_t distinct_anchors_ = 0;
};

// Levenberg-Marquardt with Marquardt scaling and Nielsen's damping update.
// Appends accepted costs to `trace`; returns true on convergence.
bool levenberg_marquardt(const Problem& prob, Eigen::VectorXd& x, const GoConfig& config, int& iterations,
                         std::vector<double>* trace) {
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double cost = prob.evaluate(x, nullptr, nullptr);
  if (trace) trace->push_back(cost);
  double lambda = config.lm_lambda0;
  double nu = 2.0;
  bool relinearize = true;
  for (int it = 0; it < config.max_iters; ++it) {
    if (cost < 1e-24) return true;
    if (relinearize) prob.evaluate(x, &h, &g);
    ++iterations;
    const double mu = 1e-9 * (h.trace() / static_cast<double>(h.rows()) + 1.0);
    Eigen::MatrixXd a = h;
    a.diagonal().array() += lambda * (h.diagonal().array() + mu);
    const Eigen::VectorXd dx = a.ldlt().solve(-g);
    const double next = prob.evaluate(x + dx, nullptr, nullptr);
    const double predicted = -(g.dot(dx) + 0.5 * dx.dot(h * dx));
    if (std::isfinite(next) && next < cost) {
      const double rho = predicted > 0.0 ? (cost - next) / predicted : 1.0;
      const double rel = (cost - next) / cost;
      x += dx;
      cost = next;
      if (trace) trace->push_back(cost);
      lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      lambda = std::max(lambda, 1e-15);
      nu = 2.0;
      relinearize = true;
      if (rel < config.rel_tol || dx.norm() < 1e-12 * (x.norm() + 1.0)) return true;
    } else {
      lambda *= nu;
      nu *= 2.0;
      relinearize = false;
      // No descent left: stationary if the gradient vanishes.
      if (lambda > 1e10) return g.norm() <= 1e-6 * (1.0 + cost);
    }
  }
  return false;
}

}  // namespace

GoSolution solve_window(const WindowProblem& problem, const GoConfig& config,
                        const std::vector<std::vector<Vec3>>& init) {
  config.validate();
  const std::size_t n_tags = problem.layout.tag_ids.size();
  if (!problem.frames || problem.first + problem.count > problem.frames->size())
    throw std::invalid_argument("solve_window: window outside the frame list");
  if (problem.anchors.size() != problem.layout.anchor_ids.size() || problem.mounts.size() != n_tags)
    throw std::invalid_argument("solve_window: anchors/mounts do not match the channel layout");
  if (init.size() != problem.count) throw std::invalid_argument("solve_window: init has the wrong frame count");

  const Problem prob(problem, config, config.link_sigma);
  if (prob.empty()) throw std::invalid_argument("solve_window: no range measurements in window");

  Eigen::VectorXd x(static_cast<Eigen::Index>(prob.size()));
  for (std::size_t k = 0; k < problem.count; ++k) {
    if (init[k].size() != n_tags) throw std::invalid_argument("solve_window: init has the wrong tag count");
    for (std::size_t i = 0; i < n_tags; ++i) x.segment<3>(static_cast<Eigen::Index>(prob.var(k, i))) = init[k][i];
  }

  GoSolution sol;
  sol.low_observability = prob.distinct_anchors() < 4;
  // A stiff rigid link makes LM crawl from a poor start; settle the layout
  // with a soft link first, then solve the real cost from there.
  constexpr double kSoftLink = 1.0;
  if (n_tags > 1 && config.link_sigma < kSoftLink) {
    const Problem soft(problem, config, kSoftLink);
    levenberg_marquardt(soft, x, config, sol.iterations, nullptr);
  }
  sol.converged = levenberg_marquardt(prob, x, config, sol.iterations, &sol.cost_trace);
  sol.cost = sol.cost_trace.back();
  sol.positions.assign(problem.count, std::vector<Vec3>(n_tags));
  for (std::size_t k = 0; k < problem.count; ++k)
    for (std::size_t i = 0; i < n_tags; ++i) sol.positions[k][i] = x.segment<3>(static_cast<Eigen::Index>(prob.var(k, i)));
  return sol;
}

GoTrajectory run_go_pipeline(const std::vector<FrameVector>& frames, const ChannelLayout& layout,
                             const Environment& env, const std::vector<TagMount>& mounts, const GoConfig& config) {
  config.validate();
  if (frames.empty()) throw std::invalid_argument("run_go_pipeline: empty trial");

  WindowProblem problem;
  problem.frames = &frames;
  problem.layout = layout;
  for (int id : layout.anchor_ids) problem.anchors.push_back(env.anchor(id));
  for (int id : layout.tag_ids) {
    const auto it = std::find_if(mounts.begin(), mounts.end(), [id](const TagMount& m) { return m.tag_id == id; });
    if (it == mounts.end()) throw std::invalid_argument("run_go_pipeline: no mount for tag " + std::to_string(id));
    problem.mounts.push_back(*it);
  }

  const std::size_t n_tags = layout.tag_ids.size();
  Vec3 centroid = Vec3::Zero();
  for (const auto& a : problem.anchors) centroid += a.position;
  centroid /= static_cast<double>(problem.anchors.size());
  std::vector<Vec3> centroid_init(n_tags);
  for (std::size_t i = 0; i < n_tags; ++i)
    centroid_init[i] = centroid + problem.mounts[i].body_offset - problem.mounts[0].body_offset;

  const std::size_t k = frames.size();
  const std::size_t w = std::min(config.window_frames, k);
  const std::size_t stride = std::max<std::size_t>(w / 2, 1);

  GoTrajectory out;
  out.stamps.reserve(k);
  for (const auto& f : frames) out.stamps.push_back(f.stamp);
  out.positions.assign(k, centroid_init);
  out.converged.assign(k, false);
  out.costs.assign(k, std::numeric_limits<double>::quiet_NaN());
  std::size_t solved_until = 0;  // frames [0, solved_until) hold an estimate

  for (std::size_t start = 0;; start = std::min(start + stride, k - w)) {
    problem.first = start;
    problem.count = w;
    std::vector<std::vector<Vec3>> init(w);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t f = start + j;
      if (config.init_mode == InitMode::Centroid || solved_until == 0)
        init[j] = centroid_init;
      else
        init[j] = out.positions[std::min(f, solved_until - 1)];
    }
    try {
      const GoSolution sol = solve_window(problem, config, init);
      for (std::size_t j = 0; j < w; ++j) {
        out.positions[start + j] = sol.positions[j];
        out.converged[start + j] = sol.converged;
        out.costs[start + j] = sol.cost;
      }
    } catch (const std::invalid_argument&) {
      // Silent window: hold the warm start.
      for (std::size_t j = 0; j < w; ++j) {
        out.positions[start + j] = init[j];
        out.converged[start + j] = false;
      }
    }
    solved_until = std::max(solved_until, start + w);
    if (start + w >= k) break;
  }
  return out;
}

void write_go_csv(const GoTrajectory& traj, const std::filesystem::path& path, const std::string& provenance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (!provenance.empty()) out << provenance << '\n';
  const std::size_t n_tags = traj.positions.empty() ? 1 : traj.positions.front().size();
  out << "stamp,x,y,z,converged,cost";
  for (std::size_t i = 1; i < n_tags; ++i) out << ",x" << i << ",y" << i << ",z" << i;
  out << '\n';
  for (std::size_t k = 0; k < traj.stamps.size(); ++k) {
    const auto& p = traj.positions[k];
    out << fmt_sig(traj.stamps[k]) << ',' << fmt_sig(p[0].x()) << ',' << fmt_sig(p[0].y()) << ',' << fmt_sig(p[0].z())
        << ',' << (traj.converged[k] ? 1 : 0) << ',' << fmt_sig(traj.costs[k]);
    for (std::size_t i = 1; i < n_tags; ++i)
      out << ',' << fmt_sig(p[i].x()) << ',' << fmt_sig(p[i].y()) << ',' << fmt_sig(p[i].z());
    out << '\n';
  }
}

}  // namespace uwbseq::go
