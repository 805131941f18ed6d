#include "pkws/train/adam.hpp"

#include <cmath>

#include "pkws/error.hpp"

namespace pkws::train {

void Adam::step(const std::vector<nn::Tensor*>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (nn::Tensor* p : params) {
    if (!p->trainable()) continue;
    auto [it, inserted] = state_.try_emplace(p->name);
    Moments& s = it->second;
    if (inserted) {
      s.m = Eigen::VectorXd::Zero(p->size());
      s.v = Eigen::VectorXd::Zero(p->size());
    }
    s.m = opts_.beta1 * s.m + (1.0 - opts_.beta1) * p->grad;
    s.v = opts_.beta2 * s.v + (1.0 - opts_.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + opts_.epsilon);
  }
}

void Adam::store(nn::Container& c, const std::string& prefix) const {
  c.meta[prefix + "steps"] = std::to_string(t_);
  c.meta[prefix + "beta1"] = nn::format_double(opts_.beta1);
  c.meta[prefix + "beta2"] = nn::format_double(opts_.beta2);
  c.meta[prefix + "epsilon"] = nn::format_double(opts_.epsilon);
  for (const auto& [name, s] : state_) {
    const auto n = static_cast<std::uint64_t>(s.m.size());
    c.put(prefix + "m." + name, {n}, {s.m.data(), static_cast<std::size_t>(n)});
    c.put(prefix + "v." + name, {n}, {s.v.data(), static_cast<std::size_t>(n)});
  }
}

Adam Adam::restore(const nn::Container& c, const std::string& prefix) {
  Options o;
  o.beta1 = c.meta_double(prefix + "beta1");
  o.beta2 = c.meta_double(prefix + "beta2");
  o.epsilon = c.meta_double(prefix + "epsilon");
  Adam a(o);
  a.t_ = c.meta_int(prefix + "steps");
  const std::string mkey = prefix + "m.";
  for (const nn::Record& r : c.records()) {
    if (r.name.rfind(mkey, 0) != 0) continue;
    const std::string name = r.name.substr(mkey.size());
    const nn::Record& v = c.get(prefix + "v." + name);
    if (v.data.size() != r.data.size()) throw ValidationError("optimizer moments for '" + name + "' disagree in size");
    Moments s;
    s.m = Eigen::Map<const Eigen::VectorXd>(r.data.data(), static_cast<Eigen::Index>(r.data.size()));
    s.v = Eigen::Map<const Eigen::VectorXd>(v.data.data(), static_cast<Eigen::Index>(v.data.size()));
    a.state_[name] = std::move(s);
  }
  return a;
}

}  // namespace pkws::train
