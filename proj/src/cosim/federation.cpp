#include "tdcosim/cosim/federation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <future>
#include <sstream>

namespace tdcosim::cosim
{
    namespace
    {
        std::string format_complex(const Complex &c)
        {
            return fmt::format("{:.17g}{:+.17g}j", c.real(), c.imag());
        }

        bool message_order(const Message &a, const Message &b)
        {
            if (a.deliver_time != b.deliver_time)
            {
                return a.deliver_time < b.deliver_time;
            }
            if (a.topic != b.topic)
            {
                return a.topic < b.topic;
            }
            return a.sequence < b.sequence;
        }
    } // namespace

    std::string payload_to_string(const Payload &value)
    {
        return std::visit(
            [](const auto &v) -> std::string {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, double>)
                {
                    return fmt::format("{:.17g}", v);
                }
                else if constexpr (std::is_same_v<T, Complex>)
                {
                    return format_complex(v);
                }
                else if constexpr (std::is_same_v<T, ComplexTriple>)
                {
                    return fmt::format("[{},{},{}]", format_complex(v[0]), format_complex(v[1]), format_complex(v[2]));
                }
                else
                {
                    std::string out = "[";
                    for (std::size_t i = 0; i < v.size(); ++i)
                    {
                        if (i > 0)
                        {
                            out += ',';
                        }
                        out += fmt::format("{:.17g}", v[i]);
                    }
                    out += ']';
                    return out;
                }
            },
            value);
    }

    std::string FederationLog::to_text() const
    {
        std::string out;
        out.reserve(entries.size() * 64);
        for (const auto &e : entries)
        {
            switch (e.kind)
            {
            case LogEntry::Kind::Grant:
                out += fmt::format("G {} {} inputs={}\n", e.time.count(), e.federate, e.input_count);
                break;
            case LogEntry::Kind::Publish:
                out += fmt::format("P {} {} {} {} {}\n", e.time.count(), e.deliver_time.count(), e.federate, e.topic,
                                   e.value);
                break;
            case LogEntry::Kind::Drop:
                out += fmt::format("D {} {} {} {} {}\n", e.time.count(), e.deliver_time.count(), e.federate, e.topic,
                                   e.value);
                break;
            }
        }
        return out;
    }

    std::vector<const LogEntry *> FederationLog::publications(std::string_view topic_prefix) const
    {
        std::vector<const LogEntry *> out;
        for (const auto &e : entries)
        {
            if (e.kind == LogEntry::Kind::Publish && std::string_view(e.topic).starts_with(topic_prefix))
            {
                out.push_back(&e);
            }
        }
        return out;
    }

    std::vector<Time> FederationLog::grants(std::string_view federate) const
    {
        std::vector<Time> out;
        for (const auto &e : entries)
        {
            if (e.kind == LogEntry::Kind::Grant && e.federate == federate)
            {
                out.push_back(e.time);
            }
        }
        return out;
    }

    Federation::Federation(FederationConfig config) : config_(std::move(config)), rng_(config_.seed) {}

    Federation::FederateState &Federation::state(FederateHandle handle)
    {
        if (handle.index >= feds_.size())
        {
            throw FederationError(FederationError::Code::InvalidDecl, "unknown federate handle");
        }
        return feds_[handle.index];
    }

    const Federation::FederateState &Federation::state(FederateHandle handle) const
    {
        if (handle.index >= feds_.size())
        {
            throw FederationError(FederationError::Code::InvalidDecl, "unknown federate handle");
        }
        return feds_[handle.index];
    }

    FederateHandle Federation::register_federate(FederateDecl decl)
    {
        using Code = FederationError::Code;
        if (started_)
        {
            throw FederationError(Code::AlreadyStarted, "federation already started; cannot register " + decl.name);
        }
        if (decl.name.empty())
        {
            throw FederationError(Code::InvalidDecl, "federate name must not be empty");
        }
        if (!(decl.exchange_interval > 0.0))
        {
            throw FederationError(Code::InvalidDecl,
                                  fmt::format("federate '{}': exchange_interval must be > 0", decl.name));
        }
        if (by_name_.contains(decl.name))
        {
            throw FederationError(Code::DuplicateName, "duplicate federate name '" + decl.name + "'");
        }
        const std::size_t index = feds_.size();
        for (const auto &topic : decl.publications)
        {
            if (topics_.contains(topic))
            {
                throw FederationError(Code::DuplicatePublication, "topic '" + topic + "' already published");
            }
        }
        for (const auto &topic : decl.publications)
        {
            TopicState ts;
            ts.publisher = index;
            if (auto it = config_.topics.find(topic); it != config_.topics.end())
            {
                ts.config = it->second;
            }
            if (ts.config.latency < 0.0 || ts.config.drop_probability < 0.0 || ts.config.drop_probability > 1.0)
            {
                throw FederationError(Code::InvalidDecl, "topic '" + topic + "': invalid latency or drop probability");
            }
            topics_.emplace(topic, std::move(ts));
        }
        by_name_.emplace(decl.name, index);
        FederateState st;
        st.interval = from_seconds(decl.exchange_interval);
        st.decl = std::move(decl);
        feds_.push_back(std::move(st));
        return FederateHandle{index};
    }

    void Federation::start()
    {
        using Code = FederationError::Code;
        if (started_)
        {
            throw FederationError(Code::AlreadyStarted, "federation already started");
        }
        for (auto &[name, topic] : topics_)
        {
            topic.subscribers.clear();
        }
        for (std::size_t i = 0; i < feds_.size(); ++i)
        {
            for (const auto &sub : feds_[i].decl.subscriptions)
            {
                auto it = topics_.find(sub);
                if (it == topics_.end())
                {
                    throw FederationError(Code::UnboundSubscription,
                                          fmt::format("federate '{}' subscribes to '{}' which no federate publishes",
                                                      feds_[i].decl.name, sub));
                }
                it->second.subscribers.push_back(i);
            }
        }
        started_ = true;
    }

    Time Federation::granted_time(FederateHandle handle) const
    {
        return state(handle).granted;
    }

    const FederateDecl &Federation::decl(FederateHandle handle) const
    {
        return state(handle).decl;
    }

    bool Federation::deliverable(const Message &m, Time granted) const
    {
        return config_.consume_at_publish_time ? m.deliver_time <= granted : m.deliver_time < granted;
    }

    std::optional<Time> Federation::grantable(FederateHandle handle, Time requested, Time stop) const
    {
        const auto &self = state(handle);
        const Time want = std::min(requested, stop);
        Time barrier = kTimeMax;
        for (std::size_t i = 0; i < feds_.size(); ++i)
        {
            if (i == handle.index || feds_[i].finished)
            {
                continue;
            }
            barrier = std::min(barrier, feds_[i].granted + feds_[i].interval);
        }
        const Time granted = std::min(want, barrier);
        if (granted <= self.granted)
        {
            return std::nullopt;
        }
        if (self.decl.uninterruptible && granted < want)
        {
            return std::nullopt;
        }
        return granted;
    }

    TimeGrant Federation::commit_grant(FederateHandle handle, Time granted)
    {
        auto &self = state(handle);
        self.granted = granted;

        TimeGrant grant;
        grant.federate = handle;
        grant.granted_time = granted;
        auto split = std::stable_partition(self.inbox.begin(), self.inbox.end(),
                                           [&](const Message &m) { return !deliverable(m, granted); });
        grant.inputs.assign(std::make_move_iterator(split), std::make_move_iterator(self.inbox.end()));
        self.inbox.erase(split, self.inbox.end());
        std::sort(grant.inputs.begin(), grant.inputs.end(), message_order);

        LogEntry entry;
        entry.kind = LogEntry::Kind::Grant;
        entry.time = granted;
        entry.federate = self.decl.name;
        entry.input_count = grant.inputs.size();
        log_.entries.push_back(std::move(entry));
        return grant;
    }

    TimeGrant Federation::request_time(FederateHandle handle, Time requested)
    {
        using Code = FederationError::Code;
        if (!started_)
        {
            throw FederationError(Code::NotStarted, "federation not started");
        }
        route_pending();
        const auto &self = state(handle);
        if (requested <= self.granted)
        {
            throw FederationError(Code::NonMonotoneRequest,
                                  fmt::format("federate '{}' requested {} s, not after its last grant {} s",
                                              self.decl.name, to_seconds(requested), to_seconds(self.granted)));
        }
        auto granted = grantable(handle, requested);
        if (!granted)
        {
            throw FederationError(Code::Blocked, fmt::format("federate '{}' cannot advance past {} s yet",
                                                             self.decl.name, to_seconds(self.granted)));
        }
        return commit_grant(handle, *granted);
    }

    void Federation::publish(FederateHandle handle, std::string_view topic, Payload value, Time time)
    {
        using Code = FederationError::Code;
        auto &self = state(handle);
        auto it = topics_.find(topic);
        if (it == topics_.end() || it->second.publisher != handle.index)
        {
            throw FederationError(Code::UnknownTopic,
                                  fmt::format("federate '{}' does not publish '{}'", self.decl.name, topic));
        }
        if (time != self.granted)
        {
            throw FederationError(Code::TimeMismatch,
                                  fmt::format("federate '{}' published '{}' at {} s but is granted {} s",
                                              self.decl.name, topic, to_seconds(time), to_seconds(self.granted)));
        }
        auto &ts = it->second;
        if (!ts.payload_index)
        {
            ts.payload_index = value.index();
        }
        else if (*ts.payload_index != value.index())
        {
            throw FederationError(Code::PayloadTypeMismatch, "payload type changed on topic '" + std::string(topic) + "'");
        }
        Message m;
        m.topic = std::string(topic);
        m.value = std::move(value);
        m.publish_time = time;
        m.deliver_time = time + from_seconds(ts.config.latency);
        m.source = self.decl.name;
        self.outbox.push_back(std::move(m));
    }

    std::size_t Federation::route_pending()
    {
        std::size_t routed = 0;
        for (auto &fed : feds_)
        {
            for (auto &m : fed.outbox)
            {
                m.sequence = sequence_++;
                const auto &ts = topics_.find(m.topic)->second;
                bool dropped = false;
                if (ts.config.drop_probability > 0.0)
                {
                    std::uniform_real_distribution<double> u(0.0, 1.0);
                    dropped = u(rng_) < ts.config.drop_probability;
                }
                LogEntry entry;
                entry.kind = dropped ? LogEntry::Kind::Drop : LogEntry::Kind::Publish;
                entry.time = m.publish_time;
                entry.deliver_time = m.deliver_time;
                entry.federate = m.source;
                entry.topic = m.topic;
                entry.value = payload_to_string(m.value);
                log_.entries.push_back(std::move(entry));
                if (dropped)
                {
                    continue;
                }
                for (std::size_t sub : ts.subscribers)
                {
                    feds_[sub].inbox.push_back(m);
                }
                ++routed;
            }
            fed.outbox.clear();
        }
        return routed;
    }

    void Federation::finish(FederateHandle handle)
    {
        state(handle).finished = true;
    }

    bool Federation::finished(FederateHandle handle) const
    {
        return state(handle).finished;
    }

    void FederateContext::publish(std::string_view topic, Payload value)
    {
        federation_.publish(handle_, topic, std::move(value), federation_.granted_time(handle_));
    }

    Time Federate::next_request(Time granted) const
    {
        return granted + from_seconds(declaration().exchange_interval);
    }

    namespace
    {
        template <typename Fn>
        void execute_wave(const std::vector<std::size_t> &members, Execution execution, Fn &&fn)
        {
            std::vector<std::exception_ptr> errors(members.size());
            if (execution == Execution::Parallel && members.size() > 1)
            {
                std::vector<std::future<void>> tasks;
                tasks.reserve(members.size());
                for (std::size_t k = 0; k < members.size(); ++k)
                {
                    tasks.push_back(std::async(std::launch::async, [&, k] {
                        try
                        {
                            fn(members[k]);
                        }
                        catch (...)
                        {
                            errors[k] = std::current_exception();
                        }
                    }));
                }
                for (auto &t : tasks)
                {
                    t.get();
                }
            }
            else
            {
                for (std::size_t k = 0; k < members.size(); ++k)
                {
                    try
                    {
                        fn(members[k]);
                    }
                    catch (...)
                    {
                        errors[k] = std::current_exception();
                    }
                }
            }
            for (auto &e : errors)
            {
                if (e)
                {
                    std::rethrow_exception(e);
                }
            }
        }
    } // namespace

    FederationLog run_federation(std::span<Federate *const> federates, const FederationConfig &config,
                                 double stop_time, RunOptions options)
    {
        using Code = FederationError::Code;
        if (!(stop_time > 0.0))
        {
            throw FederationError(Code::InvalidDecl, "stop_time must be > 0");
        }
        Federation fed(config);
        std::vector<FederateHandle> handles;
        std::vector<std::string> names;
        for (auto *f : federates)
        {
            auto decl = f->declaration();
            names.push_back(decl.name);
            handles.push_back(fed.register_federate(std::move(decl)));
        }
        fed.start();
        const Time stop = from_seconds(stop_time);
        const std::size_t n = federates.size();

        auto wrap_failure = [&](std::size_t i, Time t, auto &&body) {
            try
            {
                body();
            }
            catch (const FederationError &)
            {
                throw;
            }
            catch (const std::exception &e)
            {
                throw FederationError(Code::FederateFailure,
                                      fmt::format("federate '{}' failed at t={} s: {}", names[i], to_seconds(t), e.what()));
            }
        };

        std::vector<std::size_t> everyone(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            everyone[i] = i;
        }
        execute_wave(everyone, options.execution, [&](std::size_t i) {
            wrap_failure(i, kTimeZero, [&] {
                FederateContext ctx(fed, handles[i]);
                federates[i]->initialize(ctx);
            });
        });
        fed.route_pending();

        std::vector<Time> pending(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            pending[i] = std::min(federates[i]->next_request(kTimeZero), stop);
        }

        std::vector<TimeGrant> grants(n);
        while (true)
        {
            std::vector<std::pair<std::size_t, Time>> candidates;
            bool all_done = true;
            for (std::size_t i = 0; i < n; ++i)
            {
                if (fed.finished(handles[i]))
                {
                    continue;
                }
                all_done = false;
                if (auto g = fed.grantable(handles[i], pending[i], stop))
                {
                    candidates.emplace_back(i, *g);
                }
            }
            if (all_done)
            {
                break;
            }
            if (candidates.empty())
            {
                std::string diag = "deadlock: no federate can be granted";
                for (std::size_t i = 0; i < n; ++i)
                {
                    if (!fed.finished(handles[i]))
                    {
                        diag += fmt::format("; '{}' granted {} s, requesting {} s", names[i],
                                            to_seconds(fed.granted_time(handles[i])), to_seconds(pending[i]));
                    }
                }
                throw FederationError(Code::Deadlock, diag);
            }
            Time wave_time = kTimeMax;
            for (const auto &[i, g] : candidates)
            {
                wave_time = std::min(wave_time, g);
            }
            std::vector<std::size_t> wave;
            for (const auto &[i, g] : candidates)
            {
                if (g == wave_time)
                {
                    wave.push_back(i);
                    grants[i] = fed.commit_grant(handles[i], g);
                }
            }
            execute_wave(wave, options.execution, [&](std::size_t i) {
                wrap_failure(i, wave_time, [&] {
                    FederateContext ctx(fed, handles[i]);
                    federates[i]->on_grant(ctx, grants[i]);
                });
            });
            fed.route_pending();
            for (std::size_t i : wave)
            {
                grants[i].inputs.clear();
                if (wave_time >= stop)
                {
                    fed.finish(handles[i]);
                    continue;
                }
                const Time next = std::min(federates[i]->next_request(wave_time), stop);
                if (next <= wave_time)
                {
                    throw FederationError(Code::NonMonotoneRequest,
                                          fmt::format("federate '{}' requested {} s after grant {} s", names[i],
                                                      to_seconds(next), to_seconds(wave_time)));
                }
                pending[i] = next;
            }
        }
        return fed.log();
    }
} // namespace tdcosim::cosim
