#include "dynbatch/engine.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace dynbatch {

BatchController::BatchController(const PolicyConfig& config, const MemoryConfig& memory)
    : config_(config), eta_(memory.eta()), epsilon_m_(memory.epsilon_m()) {
  if (config.refresh_period < 1) throw ConfigError("refresh_period must be >= 1");
  if (config.w_sla < 1 || config.w_len < 1) throw ConfigError("windows must be >= 1");
  if (!(config.prior.m > 0.0) || !(config.prior.v >= 0.0)) {
    throw ConfigError("prior moments must have m > 0 and v >= 0");
  }
  sla_ = SlaSearchState::initial(config.d_sla_ms, config.epsilon_d_ms, config.alpha,
                                 config.delta, config.b_min, config.b_max);
  if (config.kind == PolicyKind::kStatic) static_decide(config.static_batch);

  l0_ = safety_buffer(config.prior, eta_, epsilon_m_);
  const auto b0 = batch_bound_quadratic(config.prior, eta_, epsilon_m_);
  mem_prev_ = std::clamp<std::int64_t>(b0.value_or(1), 1, config.b_max);
  sla_prev_ = (config.b_min + config.b_max) / 2;
}

PolicyDecision BatchController::decide(const PolicyInputs& inputs) {
  const bool refresh = decisions_ % config_.refresh_period == 0;
  ++decisions_;
  const bool uses_memory =
      config_.kind == PolicyKind::kMemory || config_.kind == PolicyKind::kCombined;
  if (uses_memory && refresh) l0_ = safety_buffer(inputs.moments, eta_, epsilon_m_);

  const auto memory_side = [&] {
    PolicyInputs in = inputs;
    in.b_prev = mem_prev_;
    auto d = batching_memory(in, eta_, l0_, config_.b_max);
    mem_prev_ = d.b_t;
    return d;
  };
  const auto sla_side = [&] {
    PolicyInputs in = inputs;
    in.b_prev = sla_prev_;
    auto [d, next] = batching_sla(sla_, in);
    sla_ = next;
    sla_prev_ = d.b_t;
    return d;
  };

  switch (config_.kind) {
    case PolicyKind::kStatic:
      return static_decide(config_.static_batch);
    case PolicyKind::kMemory:
      return memory_side();
    case PolicyKind::kSla:
      return sla_side();
    case PolicyKind::kCombined: {
      const auto mem = memory_side();
      const auto sla = sla_side();
      return combined_decide(mem, sla);
    }
  }
  return static_decide(config_.static_batch);
}

std::size_t admit(std::span<const std::int64_t> queued_prefill_tokens,
                  std::int64_t n_running, std::int64_t b_t,
                  std::int64_t headroom_tokens) {
  const std::int64_t slots = b_t - n_running;
  std::size_t admitted = 0;
  std::int64_t remaining = headroom_tokens;
  while (admitted < queued_prefill_tokens.size() &&
         static_cast<std::int64_t>(admitted) < slots) {
    const std::int64_t need = queued_prefill_tokens[admitted] + 1;
    if (need > remaining) break;
    remaining -= need;
    ++admitted;
  }
  return admitted;
}

std::size_t preempt_on_overflow(std::span<const std::int64_t> footprints,
                                std::int64_t eta) {
  std::int64_t occupancy = 0;
  for (auto f : footprints) occupancy += f;
  std::size_t evicted = 0;
  while (occupancy > eta) {
    if (evicted + 1 >= footprints.size()) {
      throw SimulationError("request footprint of " +
                            std::to_string(footprints.front()) +
                            " tokens exceeds memory capacity " + std::to_string(eta));
    }
    occupancy -= footprints[footprints.size() - 1 - evicted];
    ++evicted;
  }
  return evicted;
}

namespace {

// Decode and chunk share one iteration: the base cost is paid once.
double fused_duration(const LatencyModel& model, std::int64_t n_decode,
                      std::int64_t chunk_tokens) {
  if (n_decode > 0) {
    return step_latency(model, n_decode) +
           model.prefill_per_token_ms() * static_cast<double>(chunk_tokens);
  }
  return chunk_tokens > 0 ? prefill_latency(model, chunk_tokens) : 0.0;
}

}  // namespace

FusedPlan fused_step(std::int64_t n_decode,
                     std::span<const std::int64_t> prefill_remaining,
                     std::int64_t b_t, const LatencyModel& model) {
  FusedPlan plan;
  plan.allocation.assign(prefill_remaining.size(), 0);
  std::int64_t budget = std::max<std::int64_t>(0, b_t - n_decode);
  for (std::size_t i = 0; i < prefill_remaining.size() && budget > 0; ++i) {
    const std::int64_t take = std::min(budget, prefill_remaining[i]);
    plan.allocation[i] = take;
    plan.chunk_tokens += take;
    budget -= take;
  }
  plan.duration_ms = fused_duration(model, n_decode, plan.chunk_tokens);
  return plan;
}

namespace {

enum class Phase { kPending, kQueued, kPrefilling, kRunning, kFinished };

struct Live {
  const RequestSpec* spec = nullptr;
  Phase phase = Phase::kPending;
  std::int64_t generated = 0;
  std::int64_t prefill_target = 0;  // l_in + generated at (re)admission
  std::int64_t prefill_done = 0;
  bool fresh = true;                // next token is the first since admission
};

class Simulator {
 public:
  Simulator(std::span<const RequestSpec> workload, const PolicyConfig& policy,
            const LatencyModel& latency, const MemoryConfig& memory,
            const EngineConfig& engine)
      : workload_(workload),
        latency_(latency),
        eta_(memory.eta()),
        engine_(engine),
        controller_(policy, memory),
        window_(policy.w_len),
        prior_(policy.prior),
        w_sla_(policy.w_sla) {
    if (workload.empty()) throw ConfigError("run: workload is empty");
    if (!(engine.swap_penalty_ms >= 0.0)) throw ConfigError("swap_penalty_ms must be >= 0");
    if (engine.max_queue < 1) throw ConfigError("max_queue must be >= 1");
    live_.resize(workload.size());
    result_.requests.resize(workload.size());
    for (std::size_t i = 0; i < workload.size(); ++i) {
      const auto& r = workload[i];
      if (r.l_in < 1 || r.l_out < 1 || !(r.arrival_ms >= 0.0)) {
        throw ConfigError("run: invalid request " + std::to_string(r.id));
      }
      if (i > 0 && r.arrival_ms < workload[i - 1].arrival_ms) {
        throw ConfigError("run: workload must be sorted by arrival");
      }
      live_[i].spec = &r;
      auto& rec = result_.requests[i];
      rec.id = r.id;
      rec.arrival_ms = r.arrival_ms;
      rec.admit_ms = -1.0;
      rec.l_in = r.l_in;
      rec.l_out = r.l_out;
    }
    result_.eta = eta_;
    result_.start_ms = workload.front().arrival_ms;
    now_ = result_.start_ms;
  }

  SimResult run() {
    while (finished_ < live_.size()) {
      enqueue_arrivals();
      if (active_.empty() && queue_.empty()) {
        now_ = workload_[next_arrival_].arrival_ms;
        continue;
      }
      step();
    }
    result_.end_ms = now_;
    return std::move(result_);
  }

 private:
  void enqueue_arrivals() {
    while (next_arrival_ < live_.size() &&
           workload_[next_arrival_].arrival_ms <= now_) {
      live_[next_arrival_].phase = Phase::kQueued;
      queue_.push_back(next_arrival_);
      ++next_arrival_;
    }
    if (static_cast<std::int64_t>(queue_.size()) > engine_.max_queue) {
      throw QueueOverflowError("waiting queue exceeded max_queue=" +
                               std::to_string(engine_.max_queue) + " at t=" +
                               std::to_string(now_) + " ms");
    }
  }

  std::int64_t count(Phase phase) const {
    return static_cast<std::int64_t>(std::count_if(
        active_.begin(), active_.end(), [&](std::size_t i) { return live_[i].phase == phase; }));
  }

  std::int64_t footprint(const Live& r) const {
    return r.phase == Phase::kRunning ? r.spec->l_in + r.generated : r.prefill_done;
  }

  PolicyInputs telemetry() const {
    PolicyInputs in;
    in.n_decode = count(Phase::kRunning);
    in.n_prefill = static_cast<std::int64_t>(queue_.size()) + count(Phase::kPrefilling);
    in.moments = window_.empty() ? prior_ : window_.moments();
    if (!recent_.empty()) {
      double tau = 0.0, b = 0.0;
      for (const auto& [t, n] : recent_) {
        tau += t;
        b += n;
      }
      in.tau_bar_ms = tau / static_cast<double>(recent_.size());
      in.b_bar = b / static_cast<double>(recent_.size());
    }
    return in;
  }

  void start(std::size_t idx) {
    auto& r = live_[idx];
    r.prefill_target = r.spec->l_in + r.generated;
    r.prefill_done = 0;
    r.fresh = true;
    auto& rec = result_.requests[idx];
    if (rec.admit_ms < 0.0) rec.admit_ms = now_;
    active_.push_back(idx);
  }

  // Evicts newest-admitted requests until projected use fits; returns the
  // number evicted. Evicted requests rejoin the queue head, oldest first.
  std::size_t relieve_overflow() {
    std::vector<std::int64_t> footprints;
    footprints.reserve(active_.size());
    for (auto i : active_) {
      const auto& r = live_[i];
      footprints.push_back(footprint(r) + (r.phase == Phase::kRunning ? 1 : 0));
    }
    const std::size_t k = preempt_on_overflow(footprints, eta_);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t idx = active_.back();
      active_.pop_back();
      auto& r = live_[idx];
      occupancy_ -= footprint(r);
      r.phase = Phase::kQueued;
      r.prefill_done = 0;
      ++result_.requests[idx].preemptions;
      queue_.push_front(idx);
    }
    return k;
  }

  void step() {
    const PolicyInputs in = telemetry();
    const PolicyDecision decision = controller_.decide(in);
    const std::int64_t b_t = decision.b_t;

    StepRecord rec;
    rec.t_ms = now_;
    rec.b_target = b_t;
    double step_ms = 0.0;

    if (engine_.mode == EngineMode::kPdSeparate) {
      step_ms += admit_separate(b_t, rec);
    } else {
      schedule_fused(b_t, rec);
    }

    std::int64_t n_running = count(Phase::kRunning);
    if (occupancy_ + n_running > eta_) {
      const std::size_t k = relieve_overflow();
      rec.overflow = true;
      step_ms += engine_.swap_penalty_ms * static_cast<double>(k);
      n_running = count(Phase::kRunning);
    }

    // Preemption may shrink the decode set after the chunk was planned; the
    // evicted chunk work is still paid for.
    if (engine_.mode == EngineMode::kPdSeparate) {
      if (n_running > 0) step_ms += step_latency(latency_, n_running);
    } else {
      step_ms += fused_duration(latency_, n_running, rec.prefill_tokens);
    }
    if (step_ms <= 0.0) {
      throw SimulationError("scheduler made no progress at t=" + std::to_string(now_));
    }

    // Decode: every running request emits one token.
    std::vector<std::size_t> done;
    for (auto idx : active_) {
      auto& r = live_[idx];
      if (r.phase != Phase::kRunning) continue;
      ++r.generated;
      ++occupancy_;
      if (!r.fresh) result_.requests[idx].tbt_samples.push_back(step_ms);
      r.fresh = false;
      if (r.generated == r.spec->l_out) done.push_back(idx);
    }
    rec.n_decode = n_running;
    rec.tokens_out = n_running;
    rec.occupancy = occupancy_;
    rec.step_ms = step_ms;
    result_.generated_tokens += n_running;

    // Prompts completed this iteration decode from the next one on.
    for (auto idx : active_) {
      auto& r = live_[idx];
      if (r.phase == Phase::kPrefilling && r.prefill_done == r.prefill_target) {
        r.phase = Phase::kRunning;
      }
    }

    for (auto idx : done) {
      auto& r = live_[idx];
      r.phase = Phase::kFinished;
      occupancy_ -= r.spec->l_in + r.generated;
      result_.requests[idx].finish_ms = now_ + step_ms;
      window_.push(r.spec->l_in, r.spec->l_out);
      ++finished_;
    }
    if (!done.empty()) {
      std::erase_if(active_, [&](std::size_t i) { return live_[i].phase == Phase::kFinished; });
    }

    const double realized = engine_.mode == EngineMode::kPdFused
                                ? static_cast<double>(n_running + rec.prefill_tokens)
                                : static_cast<double>(n_running);
    if (n_running > 0) {
      recent_.emplace_back(step_ms, realized);
      if (recent_.size() > w_sla_) recent_.pop_front();
    }

    result_.steps.push_back(rec);
    now_ += step_ms;
  }

  // Admits a FCFS prefix of the queue and returns the prefill time charged.
  double admit_separate(std::int64_t b_t, StepRecord& rec) {
    const std::int64_t n_running = static_cast<std::int64_t>(active_.size());
    const std::int64_t headroom = eta_ - occupancy_ - n_running;
    std::vector<std::int64_t> sizes;
    const std::size_t probe =
        std::min<std::size_t>(queue_.size(), static_cast<std::size_t>(std::max<std::int64_t>(0, b_t - n_running)));
    sizes.reserve(probe);
    for (std::size_t j = 0; j < probe; ++j) {
      const auto& r = live_[queue_[j]];
      sizes.push_back(r.spec->l_in + r.generated);
    }
    const std::size_t k = admit(sizes, n_running, b_t, headroom);
    if (k == 0 && active_.empty() && !queue_.empty()) {
      const auto& head = live_[queue_.front()];
      throw SimulationError("request " + std::to_string(head.spec->id) + " needs " +
                            std::to_string(head.spec->l_in + head.generated + 1) +
                            " tokens but memory capacity is " + std::to_string(eta_));
    }
    std::int64_t tokens = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t idx = queue_.front();
      queue_.pop_front();
      start(idx);
      auto& r = live_[idx];
      r.prefill_done = r.prefill_target;
      r.phase = Phase::kRunning;
      occupancy_ += r.prefill_target;
      tokens += r.prefill_target;
    }
    rec.prefill_tokens = tokens;
    return tokens > 0 ? prefill_latency(latency_, tokens) : 0.0;
  }

  // Starts new prefills within the token budget and applies one chunk.
  void schedule_fused(std::int64_t b_t, StepRecord& rec) {
    const std::int64_t n_decode = count(Phase::kRunning);
    const std::int64_t budget = std::max<std::int64_t>(0, b_t - n_decode);

    std::int64_t outstanding = 0;  // reserved but not yet filled prompt tokens
    std::int64_t pending = 0;
    std::int64_t n_prefilling = 0;
    for (auto idx : active_) {
      const auto& r = live_[idx];
      if (r.phase != Phase::kPrefilling) continue;
      outstanding += r.prefill_target + 1 - r.prefill_done;
      pending += r.prefill_target - r.prefill_done;
      ++n_prefilling;
    }
    while (!queue_.empty() && pending < budget && n_decode + n_prefilling < b_t) {
      const auto& head = live_[queue_.front()];
      const std::int64_t need = head.spec->l_in + head.generated + 1;
      if (occupancy_ + outstanding + n_decode + need > eta_) break;
      const std::size_t idx = queue_.front();
      queue_.pop_front();
      start(idx);
      live_[idx].phase = Phase::kPrefilling;
      outstanding += need;
      pending += need - 1;
      ++n_prefilling;
    }
    if (active_.empty() && !queue_.empty()) {
      const auto& head = live_[queue_.front()];
      throw SimulationError("request " + std::to_string(head.spec->id) + " needs " +
                            std::to_string(head.spec->l_in + head.generated + 1) +
                            " tokens but memory capacity is " + std::to_string(eta_));
    }

    std::vector<std::size_t> order;
    std::vector<std::int64_t> remaining;
    for (auto idx : active_) {
      const auto& r = live_[idx];
      if (r.phase != Phase::kPrefilling) continue;
      order.push_back(idx);
      remaining.push_back(r.prefill_target - r.prefill_done);
    }
    const FusedPlan plan = fused_step(n_decode, remaining, b_t, latency_);
    for (std::size_t j = 0; j < order.size(); ++j) {
      live_[order[j]].prefill_done += plan.allocation[j];
      occupancy_ += plan.allocation[j];
    }
    rec.prefill_tokens = plan.chunk_tokens;
  }

  std::span<const RequestSpec> workload_;
  const LatencyModel& latency_;
  std::int64_t eta_;
  EngineConfig engine_;
  BatchController controller_;
  MomentWindow window_;
  LengthMoments prior_;
  std::size_t w_sla_;

  std::vector<Live> live_;
  std::deque<std::size_t> queue_;
  std::vector<std::size_t> active_;  // admission order
  std::deque<std::pair<double, double>> recent_;
  std::size_t next_arrival_ = 0;
  std::size_t finished_ = 0;
  std::int64_t occupancy_ = 0;
  double now_ = 0.0;
  SimResult result_;
};

}  // namespace

SimResult run(std::span<const RequestSpec> workload, const PolicyConfig& policy,
              const LatencyModel& latency, const MemoryConfig& memory,
              const EngineConfig& engine) {
  return Simulator(workload, policy, latency, memory, engine).run();
}

void write_step_csv(const std::filesystem::path& path, const SimResult& result) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write step log: " + path.string());
  out << "t_ms,b_target,n_decode,prefill_tokens,step_ms,tokens_out,occupancy,overflow\n";
  out << std::setprecision(17);
  for (const auto& s : result.steps) {
    out << s.t_ms << ',' << s.b_target << ',' << s.n_decode << ',' << s.prefill_tokens << ','
        << s.step_ms << ',' << s.tokens_out << ',' << s.occupancy << ','
        << (s.overflow ? 1 : 0) << '\n';
  }
}

std::vector<StepRecord> load_step_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open step log: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "t_ms,b_target,n_decode,prefill_tokens,step_ms,tokens_out,occupancy,overflow") {
    throw ParseError(path.string() + ":1: unexpected step log header");
  }
  std::vector<StepRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    StepRecord s;
    int overflow = 0;
    if (!(row >> s.t_ms >> s.b_target >> s.n_decode >> s.prefill_tokens >> s.step_ms >>
          s.tokens_out >> s.occupancy >> overflow)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    s.overflow = overflow != 0;
    out.push_back(s);
  }
  return out;
}

}  // namespace dynbatch
