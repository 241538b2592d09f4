#include "dear/gradcheck.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>

#include "dear/errors.hpp"
#include "dear/rng.hpp"

namespace dear::gradcheck {

namespace {

void require_pd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw DomainError(std::string(what) + " is not positive definite");
}

Eigen::Matrix2d scm_factor(double a) {
  Eigen::Matrix2d l;
  l << 1.0, 0.0, a, 1.0;
  return l;
}

}  // namespace

void LinGaussSpec::validate() const {
  if (!(sigma_e > 0.0) || !(sigma_g > 0.0)) throw DomainError("sigma_e and sigma_g must be positive");
  if (!sigma_x.isApprox(sigma_x.transpose())) throw DomainError("sigma_x must be symmetric");
  require_pd(sigma_x, "sigma_x");
}

LinGaussSpec LinGaussSpec::reference() {
  LinGaussSpec s;
  s.mu_x << 0.3, -0.2;
  s.sigma_x << 1.0, 0.3, 0.3, 0.8;
  s.w_e << 0.7, -0.34, -0.03, 0.85;
  s.b_e << 0.06, -0.38;
  s.sigma_e = 0.63;
  s.w_g << 0.94, 0.23, -0.21, 0.75;
  s.b_g << 0.42, -0.18;
  s.sigma_g = 0.82;
  s.a = -0.11;
  return s;
}

GaussianJoint joint_q(const LinGaussSpec& s) {
  s.validate();
  GaussianJoint j{Eigen::VectorXd(4), Eigen::MatrixXd(4, 4)};
  j.mean << s.mu_x, s.w_e * s.mu_x + s.b_e;
  const Eigen::Matrix2d cross = s.w_e * s.sigma_x;
  j.cov.topLeftCorner<2, 2>() = s.sigma_x;
  j.cov.bottomLeftCorner<2, 2>() = cross;
  j.cov.topRightCorner<2, 2>() = cross.transpose();
  j.cov.bottomRightCorner<2, 2>() = cross * s.w_e.transpose() + s.sigma_e * s.sigma_e * Eigen::Matrix2d::Identity();
  return j;
}

GaussianJoint joint_p(const LinGaussSpec& s) {
  s.validate();
  GaussianJoint j{Eigen::VectorXd(4), Eigen::MatrixXd(4, 4)};
  const Eigen::Matrix2d l = scm_factor(s.a);
  const Eigen::Matrix2d sz = l * l.transpose();
  j.mean << s.b_g, Eigen::Vector2d::Zero();
  const Eigen::Matrix2d cross = s.w_g * sz;  // cov(x, z)
  j.cov.topLeftCorner<2, 2>() = cross * s.w_g.transpose() + s.sigma_g * s.sigma_g * Eigen::Matrix2d::Identity();
  j.cov.topRightCorner<2, 2>() = cross;
  j.cov.bottomLeftCorner<2, 2>() = cross.transpose();
  j.cov.bottomRightCorner<2, 2>() = sz;
  return j;
}

double kl_gauss(const GaussianJoint& q, const GaussianJoint& p) {
  const auto d = q.mean.size();
  if (p.mean.size() != d || q.cov.rows() != d || q.cov.cols() != d || p.cov.rows() != d || p.cov.cols() != d)
    throw ShapeError("Gaussian dimensions do not match");
  Eigen::LLT<Eigen::MatrixXd> lp(p.cov), lq(q.cov);
  if (lp.info() != Eigen::Success) throw DomainError("p covariance is singular or indefinite");
  if (lq.info() != Eigen::Success) throw DomainError("q covariance is singular or indefinite");
  const Eigen::VectorXd diff = p.mean - q.mean;
  const double trace = lp.solve(q.cov).trace();
  const double maha = diff.dot(lp.solve(diff));
  const double logdet_p = 2.0 * lp.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_q = 2.0 * lq.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * (trace + maha - static_cast<double>(d) + logdet_p - logdet_q);
}

double kl_of(const LinGaussSpec& spec) { return kl_gauss(joint_q(spec), joint_p(spec)); }

QuadraticDisc::QuadraticDisc(const GaussianJoint& q, const GaussianJoint& p) {
  if (q.mean.size() != 4 || p.mean.size() != 4) throw ShapeError("optimal critic expects 4-dimensional joints");
  Eigen::LLT<Eigen::MatrixXd> lq(q.cov), lp(p.cov);
  if (lq.info() != Eigen::Success || lp.info() != Eigen::Success) throw DomainError("degenerate joint covariance");
  mean_q_ = q.mean;
  mean_p_ = p.mean;
  prec_q_ = lq.solve(Eigen::MatrixXd::Identity(4, 4));
  prec_p_ = lp.solve(Eigen::MatrixXd::Identity(4, 4));
  const double logdet_p = 2.0 * lp.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_q = 2.0 * lq.matrixL().toDenseMatrix().diagonal().array().log().sum();
  constant_ = 0.5 * (logdet_p - logdet_q);
}

double QuadraticDisc::value(const Eigen::Vector4d& v) const {
  const Eigen::Vector4d dq = v - mean_q_;
  const Eigen::Vector4d dp = v - mean_p_;
  return constant_ - 0.5 * dq.dot(prec_q_ * dq) + 0.5 * dp.dot(prec_p_ * dp);
}

Eigen::Vector4d QuadraticDisc::gradient(const Eigen::Vector4d& v) const {
  return prec_p_ * (v - mean_p_) - prec_q_ * (v - mean_q_);
}

QuadraticDisc optimal_disc(const LinGaussSpec& spec) { return QuadraticDisc(joint_q(spec), joint_p(spec)); }

double fd_grad(const std::function<double(double)>& f, double p, double h) {
  const double hi = f(p + h);
  const double lo = f(p - h);
  if (!std::isfinite(hi) || !std::isfinite(lo)) throw NonFiniteError("non-finite evaluation in finite difference");
  return (hi - lo) / (2.0 * h);
}

const std::vector<std::string>& parameter_names() {
  static const std::vector<std::string> names = {
      "w_g[1,1]", "w_g[1,2]", "w_g[2,1]", "w_g[2,2]", "b_g[1]", "b_g[2]", "w_e[1,1]",
      "w_e[1,2]", "w_e[2,1]", "w_e[2,2]", "b_e[1]", "b_e[2]", "a"};
  return names;
}

Eigen::VectorXd pack(const LinGaussSpec& s) {
  Eigen::VectorXd p(kParamCount);
  p << s.w_g(0, 0), s.w_g(0, 1), s.w_g(1, 0), s.w_g(1, 1), s.b_g, s.w_e(0, 0), s.w_e(0, 1), s.w_e(1, 0), s.w_e(1, 1),
      s.b_e, s.a;
  return p;
}

LinGaussSpec unpack(const LinGaussSpec& base, const Eigen::VectorXd& p) {
  if (p.size() != kParamCount) throw ShapeError("expected 13 linear-Gaussian parameters");
  LinGaussSpec s = base;
  s.w_g << p[0], p[1], p[2], p[3];
  s.b_g << p[4], p[5];
  s.w_e << p[6], p[7], p[8], p[9];
  s.b_e << p[10], p[11];
  s.a = p[12];
  return s;
}

Eigen::VectorXd fd_kl_grad(const LinGaussSpec& spec, double h) {
  const Eigen::VectorXd base = pack(spec);
  Eigen::VectorXd g(kParamCount);
  for (int i = 0; i < kParamCount; ++i) {
    g[i] = fd_grad(
        [&](double v) {
          Eigen::VectorXd p = base;
          p[i] = v;
          return kl_of(unpack(spec, p));
        },
        base[i], h);
  }
  return g;
}

Eigen::VectorXd mc_lemma1(const LinGaussSpec& spec, long n_samples, std::uint64_t seed) {
  if (n_samples < kMinSamples) throw ArityError("mc_lemma1 needs at least 10000 samples");
  const QuadraticDisc disc = optimal_disc(spec);
  const Eigen::Matrix2d lx = spec.sigma_x.llt().matrixL();
  Rng rng(seed, 0x6c656d);

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(kParamCount);
  Eigen::Vector4d v;
  for (long i = 0; i < n_samples; ++i) {
    // generator side: z = F(eps), x = G(z) + noise
    const double e1 = rng.normal(), e2 = rng.normal();
    const Eigen::Vector2d eta(rng.normal(), rng.normal());
    const Eigen::Vector2d z(e1, spec.a * e1 + e2);
    const Eigen::Vector2d x = spec.w_g * z + spec.b_g + spec.sigma_g * eta;
    v << x, z;
    const double s = std::exp(disc.value(v));
    const Eigen::Vector4d g = disc.gradient(v);
    const Eigen::Vector2d gx = g.head<2>();
    acc[0] -= s * gx[0] * z[0];
    acc[1] -= s * gx[0] * z[1];
    acc[2] -= s * gx[1] * z[0];
    acc[3] -= s * gx[1] * z[1];
    acc[4] -= s * gx[0];
    acc[5] -= s * gx[1];
    // dz/da = (0, eps1)
    const Eigen::Vector2d dz = spec.w_g.transpose() * gx + g.tail<2>();
    acc[12] -= s * dz[1] * e1;

    // encoder side: positive sign, no weight
    const Eigen::Vector2d xi(rng.normal(), rng.normal());
    const Eigen::Vector2d nu(rng.normal(), rng.normal());
    const Eigen::Vector2d xq = spec.mu_x + lx * xi;
    const Eigen::Vector2d zq = spec.w_e * xq + spec.b_e + spec.sigma_e * nu;
    v << xq, zq;
    const Eigen::Vector2d gz = disc.gradient(v).tail<2>();
    acc[6] += gz[0] * xq[0];
    acc[7] += gz[0] * xq[1];
    acc[8] += gz[1] * xq[0];
    acc[9] += gz[1] * xq[1];
    acc[10] += gz[0];
    acc[11] += gz[1];
  }
  return acc / static_cast<double>(n_samples);
}

bool within_tolerance(double estimate, double reference) {
  return std::abs(estimate - reference) <= std::max(0.02 * std::abs(reference), 0.01);
}

std::vector<GradcheckRow> gradcheck_table(const LinGaussSpec& spec, long n_samples,
                                          const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ArityError("gradcheck needs at least one seed");
  Eigen::VectorXd mc = Eigen::VectorXd::Zero(kParamCount);
  for (auto seed : seeds) mc += mc_lemma1(spec, n_samples, seed);
  mc /= static_cast<double>(seeds.size());
  const Eigen::VectorXd fd = fd_kl_grad(spec);
  std::vector<GradcheckRow> rows;
  for (int i = 0; i < kParamCount; ++i) {
    GradcheckRow r;
    r.name = parameter_names()[i];
    r.mc = mc[i];
    r.fd = fd[i];
    r.abs_err = std::abs(mc[i] - fd[i]);
    r.rel_err = fd[i] != 0.0 ? r.abs_err / std::abs(fd[i]) : std::numeric_limits<double>::infinity();
    r.pass = within_tolerance(mc[i], fd[i]);
    rows.push_back(r);
  }
  return rows;
}

void write_csv(std::ostream& out, const std::vector<GradcheckRow>& rows) {
  out << "parameter,mc_estimate,fd_reference,abs_error,rel_error,pass\n";
  out << std::setprecision(10);
  for (const auto& r : rows)
    out << r.name << ',' << r.mc << ',' << r.fd << ',' << r.abs_err << ',' << r.rel_err << ','
        << (r.pass ? "true" : "false") << '\n';
}

LinGaussModel to_model(const LinGaussSpec& spec) {
  spec.validate();
  const NetSpec lin{{2, 2}, {Activation::kIdentity}, NetRole::kGeneric};
  LinGaussModel model;
  model.encoder = Net::init(lin, 0);
  model.encoder.weight(0) = spec.w_e;
  model.encoder.bias(0) = spec.b_e;
  model.generator = Net::init(lin, 0);
  model.generator.weight(0) = spec.w_g;
  model.generator.bias(0) = spec.b_g;
  Eigen::MatrixXi edges = Eigen::MatrixXi::Zero(2, 2);
  edges(0, 1) = 1;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 2);
  w(0, 1) = spec.a;
  model.prior = ScmPrior(2, apply_mask(w, GraphMask(edges)), ElementwiseTransform::identity(2));
  return model;
}

LinGaussSpec from_model(const LinGaussSpec& base, const LinGaussModel& model) {
  LinGaussSpec s = base;
  s.w_e = model.encoder.weight(0);
  s.b_e = model.encoder.bias(0);
  s.w_g = model.generator.weight(0);
  s.b_g = model.generator.bias(0);
  s.a = model.prior.adjacency().weights(0, 1);
  return s;
}

Critic quadratic_critic(const QuadraticDisc& disc) {
  return [disc](const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) {
    if (x.rows() != 2 || z.rows() != 2 || x.cols() != z.cols()) throw ShapeError("quadratic critic expects 2-d pairs");
    CriticEval out;
    const auto n = x.cols();
    out.score.resize(n);
    out.grad_x.resize(2, n);
    out.grad_z.resize(2, n);
    Eigen::Vector4d v;
    for (Eigen::Index c = 0; c < n; ++c) {
      v << x.col(c), z.col(c);
      out.score[c] = disc.value(v);
      const Eigen::Vector4d g = disc.gradient(v);
      out.grad_x.col(c) = g.head<2>();
      out.grad_z.col(c) = g.tail<2>();
    }
    return out;
  };
}

}  // namespace dear::gradcheck
