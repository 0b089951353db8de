#include <cmath>
#include <fstream>
#include <set>

#include "ebrc/harness.hpp"

namespace ebrc::harness {

using nlohmann::json;

namespace {

bool non_negative_int(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be rejected.
class Reader {
  public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number()) throw ConfigError(at(key), "expected a number");
            out = v->get<double>();
            if (!std::isfinite(out)) throw ConfigError(at(key), "expected a finite number");
        }
    }

    template <class U>
    void unsigned_int(const std::string& key, U& out) {
        if (const auto* v = find(key)) {
            if (!non_negative_int(*v))
                throw ConfigError(at(key), "expected a non-negative integer");
            out = static_cast<U>(v->get<std::uint64_t>());
        }
    }

    void boolean(const std::string& key, bool& out) {
        if (const auto* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void string(const std::string& key, std::string& out) {
        if (const auto* v = find(key)) {
            if (!v->is_string()) throw ConfigError(at(key), "expected a string");
            out = v->get<std::string>();
        }
    }

    // Milliseconds in the file, microseconds in memory.
    void millis_field(const std::string& key, SimTime& out) {
        double ms = to_millis(out);
        number(key, ms);
        if (ms < 0) throw ConfigError(at(key), "must be non-negative");
        out = static_cast<SimTime>(std::llround(ms * 1000.0));
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.contains(key)) throw ConfigError(at(key), "unknown field");
    }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<NodeId> node_list(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path, "expected an array of node ids");
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!non_negative_int(v[i])) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a node id");
        out.push_back(v[i].get<NodeId>());
    }
    return out;
}

void check_fraction(double v, const std::string& path, bool allow_zero = true) {
    if (!(v <= 1.0) || v < 0.0 || (!allow_zero && v == 0.0))
        throw ConfigError(path, allow_zero ? "must be within [0, 1]" : "must be within (0, 1]");
}

}  // namespace

ScenarioConfig parse_scenario(const json& doc) {
    ScenarioConfig c;
    Reader r(doc, "");
    r.string("name", c.name);

    std::string protocol = consensus::to_string(c.protocol);
    r.string("protocol", protocol);
    try {
        c.protocol = consensus::protocol_from_string(protocol);
    } catch (const std::invalid_argument&) {
        throw ConfigError("protocol", "expected \"ebrc\" or \"pbft\"");
    }

    r.unsigned_int("node_count", c.node_count);
    std::string committee = c.committee == CommitteeMode::All ? "all" : "elected";
    r.string("committee", committee);
    if (committee == "all")
        c.committee = CommitteeMode::All;
    else if (committee == "elected")
        c.committee = CommitteeMode::Elected;
    else
        throw ConfigError("committee", "expected \"elected\" or \"all\"");

    if (const auto* e = r.find("election")) {
        Reader er(*e, "election");
        er.number("omega", c.election.omega);
        er.unsigned_int("target_committee_size", c.election.target_committee_size);
        er.millis_field("connect_window_ms", c.election.connect_window);
        er.number("eligibility_percentile", c.election.eligibility_percentile);
        er.number("consensus_percentile", c.election.consensus_percentile);
        er.finish();
    }

    if (const auto* rep = r.find("reputation")) {
        Reader rr(*rep, "reputation");
        if (const auto* w = rr.find("weights")) {
            Reader wr(*w, "reputation.weights");
            wr.number("margin", c.reputation.weights.margin);
            wr.number("incomplete", c.reputation.weights.incomplete);
            wr.number("evil", c.reputation.weights.evil);
            wr.number("activity", c.reputation.weights.activity);
            wr.number("magnitude", c.reputation.weights.magnitude);
            wr.finish();
        }
        rr.boolean("literal_eq2", c.reputation.literal_eq2);
        rr.number("slash_fraction", c.reputation.slash_fraction);
        rr.number("deposit_cap", c.deposit_cap);
        rr.number("default_deposit", c.default_deposit);
        if (const auto* d = rr.find("deposits")) {
            if (!d->is_object()) throw ConfigError("reputation.deposits", "expected an object of id: amount");
            for (const auto& [key, value] : d->items()) {
                const auto path = "reputation.deposits." + key;
                NodeId id = 0;
                try {
                    std::size_t used = 0;
                    id = static_cast<NodeId>(std::stoul(key, &used));
                    if (used != key.size()) throw std::invalid_argument(key);
                } catch (const std::exception&) {
                    throw ConfigError(path, "keys must be node ids");
                }
                if (!value.is_number() || value.get<double>() < 0) throw ConfigError(path, "expected a non-negative number");
                c.deposits[id] = value.get<double>();
            }
        }
        rr.finish();
    }

    r.unsigned_int("epochs", c.epochs);
    r.unsigned_int("rounds_per_epoch", c.rounds_per_epoch);
    r.unsigned_int("block_tx_cap", c.block_tx_cap);
    r.unsigned_int("client_load", c.client_load);

    if (const auto* p = r.find("payload")) {
        Reader pr(*p, "payload");
        pr.unsigned_int("min_bytes", c.payload.min_bytes);
        pr.unsigned_int("max_bytes", c.payload.max_bytes);
        pr.finish();
    }

    if (const auto* t = r.find("timing")) {
        Reader tr(*t, "timing");
        tr.millis_field("batch_wait_ms", c.batch_wait);
        tr.millis_field("view_change_timeout_ms", c.view_change_timeout);
        tr.boolean("quick_skip", c.quick_skip);
        tr.millis_field("round_time_limit_ms", c.round_time_limit);
        tr.number("hours_per_round", c.hours_per_round);
        tr.finish();
    }

    if (const auto* n = r.find("network")) {
        Reader nr(*n, "network");
        nr.millis_field("base_latency_ms", c.network.base_latency);
        nr.millis_field("jitter_ms", c.network.jitter);
        nr.number("drop_rate", c.network.drop_rate);
        nr.unsigned_int("processing_cost_us", c.network.processing_cost);
        if (const auto* parts = nr.find("partitions")) {
            if (!parts->is_array()) throw ConfigError("network.partitions", "expected an array");
            for (std::size_t i = 0; i < parts->size(); ++i) {
                const auto path = "network.partitions[" + std::to_string(i) + "]";
                Reader pr((*parts)[i], path);
                simnet::Partition part;
                pr.millis_field("start_ms", part.start);
                pr.millis_field("end_ms", part.end);
                if (const auto* nodes = pr.find("nodes")) {
                    for (auto id : node_list(*nodes, path + ".nodes")) part.nodes.insert(id);
                }
                pr.finish();
                c.network.partitions.push_back(std::move(part));
            }
        }
        nr.finish();
    }

    bool count_is_f = false;
    if (const auto* b = r.find("byzantine")) {
        Reader br(*b, "byzantine");
        std::string behavior = simnet::to_string(c.byzantine.behavior);
        br.string("behavior", behavior);
        try {
            c.byzantine.behavior = simnet::behavior_from_string(behavior);
        } catch (const std::invalid_argument&) {
            throw ConfigError("byzantine.behavior", "expected honest, silent, equivocate, corrupt_digest or lazy");
        }
        if (const auto* nodes = br.find("nodes")) c.byzantine.nodes = node_list(*nodes, "byzantine.nodes");
        if (const auto* count = br.find("count")) {
            if (count->is_string() && count->get<std::string>() == "f")
                count_is_f = true;
            else if (non_negative_int(*count))
                c.byzantine.count = count->get<std::size_t>();
            else
                throw ConfigError("byzantine.count", "expected a non-negative integer or \"f\"");
        }
        br.unsigned_int("first_epoch", c.byzantine.first_epoch);
        br.unsigned_int("last_epoch", c.byzantine.last_epoch);
        br.number("lazy_factor", c.byzantine.lazy_factor);
        br.boolean("allow_over_threshold", c.byzantine.allow_over_threshold);
        br.finish();
    }
    if (count_is_f) c.byzantine.count = max_faults(c.node_count);

    if (const auto* d = r.find("djep")) {
        if (!d->is_array()) throw ConfigError("djep", "expected an array of scripted exits");
        for (std::size_t i = 0; i < d->size(); ++i) {
            const auto path = "djep[" + std::to_string(i) + "]";
            Reader dr((*d)[i], path);
            ScriptedExit e;
            dr.unsigned_int("round", e.round);
            if (const auto* node = dr.find("node")) {
                if (!non_negative_int(*node)) throw ConfigError(path + ".node", "expected a node id");
                e.node = node->get<NodeId>();
            }
            std::string action = "exit";
            dr.string("action", action);
            if (action != "exit") throw ConfigError(path + ".action", "only \"exit\" is supported");
            dr.finish();
            c.djep.push_back(e);
        }
    }

    r.unsigned_int("seed", c.seed);
    r.finish();
    validate(c);
    return c;
}

ScenarioConfig load_scenario(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file, "cannot open scenario file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(file, std::string("malformed JSON: ") + e.what());
    }
    return parse_scenario(doc);
}

void validate(const ScenarioConfig& c) {
    if (c.node_count < 4) throw ConfigError("node_count", "at least 4 nodes are required");
    if (c.node_count >= kClientIdBase) throw ConfigError("node_count", "too many nodes");
    if (c.election.target_committee_size < 4)
        throw ConfigError("election.target_committee_size", "must be at least 4");
    if (c.election.target_committee_size > c.node_count)
        throw ConfigError("election.target_committee_size", "must not exceed node_count");
    check_fraction(c.election.omega, "election.omega", false);
    check_fraction(c.election.eligibility_percentile, "election.eligibility_percentile", false);
    check_fraction(c.election.consensus_percentile, "election.consensus_percentile", false);
    if (c.election.consensus_percentile > c.election.eligibility_percentile)
        throw ConfigError("election.consensus_percentile", "must not exceed eligibility_percentile");
    if (!c.reputation.weights.valid()) throw ConfigError("reputation.weights", "weights must be non-negative and sum to 1");
    check_fraction(c.reputation.slash_fraction, "reputation.slash_fraction");
    check_fraction(c.deposit_cap, "reputation.deposit_cap", false);
    if (c.default_deposit < 0) throw ConfigError("reputation.default_deposit", "must be non-negative");
    for (const auto& [id, amount] : c.deposits)
        if (id >= c.node_count) throw ConfigError("reputation.deposits." + std::to_string(id), "no such node");
    if (c.epochs < 1) throw ConfigError("epochs", "must be at least 1");
    if (c.rounds_per_epoch < 1) throw ConfigError("rounds_per_epoch", "must be at least 1");
    if (c.block_tx_cap < 1) throw ConfigError("block_tx_cap", "must be at least 1");
    if (c.client_load < 1) throw ConfigError("client_load", "must be at least 1");
    if (c.payload.min_bytes > c.payload.max_bytes) throw ConfigError("payload.min_bytes", "must not exceed max_bytes");
    if (c.round_time_limit <= 0) throw ConfigError("timing.round_time_limit_ms", "must be positive");
    if (c.view_change_timeout <= 0) throw ConfigError("timing.view_change_timeout_ms", "must be positive");
    if (c.hours_per_round < 0) throw ConfigError("timing.hours_per_round", "must be non-negative");
    check_fraction(c.network.drop_rate, "network.drop_rate");
    for (std::size_t i = 0; i < c.network.partitions.size(); ++i) {
        const auto& p = c.network.partitions[i];
        const auto path = "network.partitions[" + std::to_string(i) + "]";
        if (p.end < p.start) throw ConfigError(path + ".end_ms", "must not precede start_ms");
        for (auto id : p.nodes)
            if (id >= c.node_count) throw ConfigError(path + ".nodes", "no such node " + std::to_string(id));
    }
    const auto& b = c.byzantine;
    for (auto id : b.nodes)
        if (id >= c.node_count) throw ConfigError("byzantine.nodes", "no such node " + std::to_string(id));
    const auto count = b.nodes.empty() ? b.count : b.nodes.size();
    if (count > c.node_count) throw ConfigError("byzantine.count", "exceeds node_count");
    if (!b.allow_over_threshold && count > max_faults(c.node_count))
        throw ConfigError("byzantine.count", "more than floor((n-1)/3) faulty nodes needs allow_over_threshold");
    if (b.lazy_factor < 1.0) throw ConfigError("byzantine.lazy_factor", "must be at least 1");
    if (b.first_epoch > b.last_epoch) throw ConfigError("byzantine.first_epoch", "must not exceed last_epoch");
    for (std::size_t i = 0; i < c.djep.size(); ++i) {
        const auto path = "djep[" + std::to_string(i) + "]";
        if (c.djep[i].node && *c.djep[i].node >= c.node_count) throw ConfigError(path + ".node", "no such node");
        if (c.djep[i].round >= c.epochs * c.rounds_per_epoch) throw ConfigError(path + ".round", "beyond the last round");
    }
    if (c.protocol == consensus::Protocol::Pbft && !c.djep.empty())
        throw ConfigError("djep", "membership scripts need the ebrc protocol");
}

json to_json(const ScenarioConfig& c) {
    json partitions = json::array();
    for (const auto& p : c.network.partitions)
        partitions.push_back({{"start_ms", to_millis(p.start)}, {"end_ms", to_millis(p.end)},
                              {"nodes", std::vector<NodeId>(p.nodes.begin(), p.nodes.end())}});
    json deposits = json::object();
    for (const auto& [id, amount] : c.deposits) deposits[std::to_string(id)] = amount;
    json djep = json::array();
    for (const auto& e : c.djep) {
        json entry = {{"round", e.round}, {"action", "exit"}};
        if (e.node) entry["node"] = *e.node;
        djep.push_back(entry);
    }
    json byz = {{"behavior", simnet::to_string(c.byzantine.behavior)}, {"nodes", c.byzantine.nodes},
                {"count", c.byzantine.count}, {"first_epoch", c.byzantine.first_epoch},
                {"lazy_factor", c.byzantine.lazy_factor}, {"allow_over_threshold", c.byzantine.allow_over_threshold}};
    if (c.byzantine.last_epoch != std::numeric_limits<std::uint64_t>::max()) byz["last_epoch"] = c.byzantine.last_epoch;
    const auto& w = c.reputation.weights;
    return {
        {"name", c.name},
        {"protocol", consensus::to_string(c.protocol)},
        {"node_count", c.node_count},
        {"committee", c.committee == CommitteeMode::All ? "all" : "elected"},
        {"election",
         {{"omega", c.election.omega},
          {"target_committee_size", c.election.target_committee_size},
          {"connect_window_ms", to_millis(c.election.connect_window)},
          {"eligibility_percentile", c.election.eligibility_percentile},
          {"consensus_percentile", c.election.consensus_percentile}}},
        {"reputation",
         {{"weights",
           {{"margin", w.margin}, {"incomplete", w.incomplete}, {"evil", w.evil}, {"activity", w.activity},
            {"magnitude", w.magnitude}}},
          {"literal_eq2", c.reputation.literal_eq2},
          {"slash_fraction", c.reputation.slash_fraction},
          {"deposit_cap", c.deposit_cap},
          {"default_deposit", c.default_deposit},
          {"deposits", deposits}}},
        {"epochs", c.epochs},
        {"rounds_per_epoch", c.rounds_per_epoch},
        {"block_tx_cap", c.block_tx_cap},
        {"client_load", c.client_load},
        {"payload", {{"min_bytes", c.payload.min_bytes}, {"max_bytes", c.payload.max_bytes}}},
        {"timing",
         {{"batch_wait_ms", to_millis(c.batch_wait)},
          {"view_change_timeout_ms", to_millis(c.view_change_timeout)},
          {"quick_skip", c.quick_skip},
          {"round_time_limit_ms", to_millis(c.round_time_limit)},
          {"hours_per_round", c.hours_per_round}}},
        {"network",
         {{"base_latency_ms", to_millis(c.network.base_latency)},
          {"jitter_ms", to_millis(c.network.jitter)},
          {"drop_rate", c.network.drop_rate},
          {"processing_cost_us", c.network.processing_cost},
          {"partitions", partitions}}},
        {"byzantine", byz},
        {"djep", djep},
        {"seed", c.seed},
    };
}

}  // namespace ebrc::harness
