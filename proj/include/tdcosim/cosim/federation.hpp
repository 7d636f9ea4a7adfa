#pragma once

#include "tdcosim/cosim/time.hpp"

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace tdcosim::cosim
{
    using Complex = std::complex<double>;
    using ComplexTriple = std::array<Complex, 3>;

    /// Value carried by one message. The alternative is fixed per topic on first publish.
    using Payload = std::variant<double, Complex, ComplexTriple, std::vector<double>>;

    std::string payload_to_string(const Payload &value);

    struct FederateHandle
    {
        std::size_t index = 0;
        friend bool operator==(FederateHandle, FederateHandle) = default;
    };

    struct FederateDecl
    {
        std::string name;
        double exchange_interval = 1.0; // seconds
        std::vector<std::string> publications;
        std::vector<std::string> subscriptions;
        // An uninterruptible federate only accepts a grant equal to its request.
        bool uninterruptible = false;
    };

    struct Message
    {
        std::string topic;
        Payload value;
        Time publish_time{};
        Time deliver_time{};
        std::string source;
        std::uint64_t sequence = 0; // global publish order, last tie-break
    };

    struct TimeGrant
    {
        FederateHandle federate;
        Time granted_time{};
        std::vector<Message> inputs;
    };

    struct TopicConfig
    {
        double latency = 0.0;          // seconds
        double drop_probability = 0.0; // [0, 1]
    };

    struct FederationConfig
    {
        std::uint64_t seed = 0;
        std::map<std::string, TopicConfig, std::less<>> topics;
        // true: a value published at t is consumed by grants >= t.
        // false: it is consumed only by grants strictly after t.
        bool consume_at_publish_time = true;
    };

    class FederationError : public std::runtime_error
    {
    public:
        enum class Code
        {
            InvalidDecl,
            DuplicateName,
            DuplicatePublication,
            UnboundSubscription,
            AlreadyStarted,
            NotStarted,
            NonMonotoneRequest,
            Blocked,
            UnknownTopic,
            TimeMismatch,
            PayloadTypeMismatch,
            Deadlock,
            FederateFailure,
        };

        FederationError(Code code, const std::string &what) : std::runtime_error(what), code_(code) {}
        Code code() const noexcept { return code_; }

    private:
        Code code_;
    };

    struct LogEntry
    {
        enum class Kind
        {
            Grant,
            Publish,
            Drop
        };
        Kind kind = Kind::Grant;
        Time time{};        // grant time or publish time
        Time deliver_time{}; // messages only
        std::string federate;
        std::string topic;
        std::string value;
        std::size_t input_count = 0; // grants only
    };

    /// Ordered record of every grant and routed message.
    struct FederationLog
    {
        std::vector<LogEntry> entries;

        std::string to_text() const;
        std::vector<const LogEntry *> publications(std::string_view topic_prefix) const;
        std::vector<Time> grants(std::string_view federate) const;
    };

    /// Conservative time-stepped broker. Single process, deterministic.
    ///
    /// Routing happens only at barrier points (any time request), so the observable
    /// log does not depend on the order in which federates run between barriers.
    class Federation
    {
    public:
        explicit Federation(FederationConfig config = {});

        FederateHandle register_federate(FederateDecl decl);

        /// Validates topic bindings and freezes the federate set.
        void start();
        bool started() const noexcept { return started_; }

        /// Grants min(requested, min over peers of last grant + interval) or throws Blocked.
        TimeGrant request_time(FederateHandle handle, Time requested);
        TimeGrant request_time(FederateHandle handle, double requested_seconds)
        {
            return request_time(handle, from_seconds(requested_seconds));
        }

        void publish(FederateHandle handle, std::string_view topic, Payload value, Time time);
        void publish(FederateHandle handle, std::string_view topic, Payload value, double time_seconds)
        {
            publish(handle, topic, std::move(value), from_seconds(time_seconds));
        }

        Time granted_time(FederateHandle handle) const;
        const FederateDecl &decl(FederateHandle handle) const;
        std::size_t size() const noexcept { return feds_.size(); }
        const FederationLog &log() const noexcept { return log_; }
        const FederationConfig &config() const noexcept { return config_; }

        // Lower-level pieces used by run_federation.

        /// Routes every outbox in registration order. Returns number of messages routed.
        std::size_t route_pending();

        /// Grant time `handle` would receive against the current peer state, if it advances.
        std::optional<Time> grantable(FederateHandle handle, Time requested, Time stop = kTimeMax) const;

        /// Commits a grant computed by grantable() and collects its inputs.
        TimeGrant commit_grant(FederateHandle handle, Time granted);

        /// Marks a federate as finished so it no longer constrains peers.
        void finish(FederateHandle handle);
        bool finished(FederateHandle handle) const;

    private:
        struct FederateState
        {
            FederateDecl decl;
            Time interval{};
            Time granted{};
            bool finished = false;
            std::vector<Message> inbox;  // routed, not yet consumed
            std::vector<Message> outbox; // published since last barrier
        };

        struct TopicState
        {
            std::size_t publisher = 0;
            std::vector<std::size_t> subscribers;
            std::optional<std::size_t> payload_index;
            TopicConfig config;
        };

        FederateState &state(FederateHandle handle);
        const FederateState &state(FederateHandle handle) const;
        bool deliverable(const Message &m, Time granted) const;

        FederationConfig config_;
        std::vector<FederateState> feds_;
        std::unordered_map<std::string, std::size_t> by_name_;
        std::map<std::string, TopicState, std::less<>> topics_;
        bool started_ = false;
        std::mt19937_64 rng_;
        std::uint64_t sequence_ = 0;
        FederationLog log_;
    };

    /// Handle given to a federate callback. Publications are buffered until the next barrier.
    class FederateContext
    {
    public:
        FederateContext(Federation &federation, FederateHandle handle) : federation_(federation), handle_(handle) {}

        void publish(std::string_view topic, Payload value);
        Time now() const { return federation_.granted_time(handle_); }
        double now_seconds() const { return to_seconds(now()); }
        FederateHandle handle() const noexcept { return handle_; }

    private:
        Federation &federation_;
        FederateHandle handle_;
    };

    /// Callback interface driven by run_federation.
    class Federate
    {
    public:
        virtual ~Federate() = default;
        virtual FederateDecl declaration() const = 0;

        /// Runs once at t = 0 before any grant; may publish initial values.
        virtual void initialize(FederateContext &) {}

        virtual void on_grant(FederateContext &ctx, const TimeGrant &grant) = 0;

        /// Next requested time after being granted `granted`. Defaults to one exchange interval.
        virtual Time next_request(Time granted) const;
    };

    enum class Execution
    {
        Sequential,
        Parallel
    };

    struct RunOptions
    {
        Execution execution = Execution::Sequential;
    };

    /// Registers the federates, then repeatedly grants the earliest wave of federates
    /// until all reach stop_time. Members of a wave see the same peer state.
    FederationLog run_federation(std::span<Federate *const> federates, const FederationConfig &config,
                                 double stop_time, RunOptions options = {});
} // namespace tdcosim::cosim
