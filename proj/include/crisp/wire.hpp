#pragma once

/**
 * Wire protocol between the engine and the model adapter sidecar.
 *
 * All requests are HTTP POST with JSON bodies (GET for /capabilities):
 *
 *   /score        {query, context, answer}            -> {logprob_sum, n_answer_tokens}
 *   /tokenize     {text}                              -> {count, spans?: [[begin, end], ...]}
 *   /embed        {texts: [...]}                      -> {vectors: [[...], ...]}
 *   /edit         {kind, inputs, template_id}         -> {text}
 *   /refine       {query, original, draft, template_id} -> {text}
 *   /generate     {prompt, max_tokens, temperature, top_p} -> {text, token_count}
 *   /attention    {trace_id, raw}                     -> attention dump record
 *   /capabilities (GET)                               -> {has_attention, ..., tokenizer_id, eos_literal}
 *
 * Errors carry a non-2xx status and {code, message}. AdapterOracle is the
 * client; install_oracle_routes() serves any Oracle over the same protocol,
 * which is how the conformance suite exercises the client without a model.
 */

#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "error.hpp"
#include "oracle.hpp"
#include "saliency.hpp"
#include "text.hpp"

namespace crisp {

namespace wire {

inline std::string error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::ContextTooLong: return "context_too_long";
        case ErrorCode::EditRefused: return "edit_refused";
        case ErrorCode::RefineRejected: return "refine_rejected";
        case ErrorCode::MissingCapability: return "missing_capability";
        case ErrorCode::InvalidArgument:
        case ErrorCode::SchemaViolation: return "invalid_request";
        case ErrorCode::MissingThinkClose: return "missing_think_close";
        default: return "backend_unavailable";
    }
}

inline ErrorCode error_code_from_name(const std::string& name) {
    if (name == "context_too_long") return ErrorCode::ContextTooLong;
    if (name == "edit_refused") return ErrorCode::EditRefused;
    if (name == "refine_rejected") return ErrorCode::RefineRejected;
    if (name == "missing_capability") return ErrorCode::MissingCapability;
    if (name == "invalid_request") return ErrorCode::InvalidArgument;
    if (name == "missing_think_close") return ErrorCode::MissingThinkClose;
    return ErrorCode::BackendUnavailable;
}

inline int http_status_for(ErrorCode c) {
    switch (c) {
        case ErrorCode::ContextTooLong: return 413;
        case ErrorCode::EditRefused:
        case ErrorCode::RefineRejected: return 422;
        case ErrorCode::MissingCapability: return 501;
        case ErrorCode::InvalidArgument:
        case ErrorCode::SchemaViolation:
        case ErrorCode::MissingThinkClose: return 400;
        default: return 503;
    }
}

inline json capabilities_to_json(const OracleCapabilities& c) {
    return json{{"has_attention", c.has_attention}, {"has_likelihood", c.has_likelihood},
                {"has_edit", c.has_edit},           {"has_embed", c.has_embed},
                {"has_generate", c.has_generate},   {"tokenizer_id", c.tokenizer_id},
                {"eos_literal", c.eos_literal}};
}

inline OracleCapabilities capabilities_from_json(const json& j) {
    OracleCapabilities c;
    c.has_attention = j.value("has_attention", false);
    c.has_likelihood = j.value("has_likelihood", false);
    c.has_edit = j.value("has_edit", false);
    c.has_embed = j.value("has_embed", false);
    c.has_generate = j.value("has_generate", false);
    c.tokenizer_id = j.value("tokenizer_id", std::string{});
    c.eos_literal = j.value("eos_literal", std::string{});
    return c;
}

inline bool is_well_formed_url(const std::string& url) {
    static const std::regex re(R"(^https?://[A-Za-z0-9._\-]+(:[0-9]{1,5})?/?$)");
    return std::regex_match(url, re);
}

}  // namespace wire

struct AdapterOptions {
    std::string url;  // e.g. http://127.0.0.1:8808
    int connect_timeout_s = 10;
    int read_timeout_s = 600;
};

class AdapterOracle : public Oracle {
public:
    explicit AdapterOracle(AdapterOptions opts) : opts_(std::move(opts)) {
        if (!wire::is_well_formed_url(opts_.url)) fail(ErrorCode::ConfigError, "malformed adapter url \"" + opts_.url + "\"");
        if (!opts_.url.empty() && opts_.url.back() == '/') opts_.url.pop_back();
    }

    const std::string& url() const { return opts_.url; }

    OracleCapabilities capabilities() const override {
        return wire::capabilities_from_json(request("GET", "/capabilities", json::object()));
    }

    LikelihoodResult score(const LikelihoodQuery& q) const override {
        if (q.answer.empty()) fail(ErrorCode::InvalidArgument, "answer must be non-empty");
        auto r = request("POST", "/score", {{"query", q.query}, {"context", q.context}, {"answer", q.answer}});
        return {field<double>(r, "logprob_sum"), field<std::size_t>(r, "n_answer_tokens")};
    }

    TokenizeResult tokenize(const std::string& text) const override {
        auto r = request("POST", "/tokenize", {{"text", text}});
        TokenizeResult out;
        out.count = field<std::size_t>(r, "count");
        if (auto it = r.find("spans"); it != r.end() && it->is_array()) {
            for (const auto& sp : *it) out.spans.push_back({sp.at(0).get<std::size_t>(), sp.at(1).get<std::size_t>()});
        }
        return out;
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const override {
        auto r = request("POST", "/embed", {{"texts", texts}});
        return field<std::vector<std::vector<double>>>(r, "vectors");
    }

    std::string apply_edit(const EditRequest& req) const override {
        check_arity(req);
        auto r = request("POST", "/edit",
                         {{"kind", to_string(req.kind)}, {"inputs", req.inputs}, {"template_id", req.template_id}});
        auto text = field<std::string>(r, "text");
        if (is_blank(text)) fail(ErrorCode::EditRefused, "adapter returned empty edit");
        return text;
    }

    std::string refine(const std::string& query, const std::string& original, const std::string& draft) const override {
        auto r = request("POST", "/refine",
                         {{"query", query},
                          {"original", original},
                          {"draft", draft},
                          {"template_id", std::string(kRefineTemplateId)}});
        auto text = field<std::string>(r, "text");
        if (is_blank(text)) fail(ErrorCode::RefineRejected, "adapter returned empty refinement");
        return text;
    }

    GenerateResult generate(const GenerateRequest& req) const override {
        auto r = request("POST", "/generate",
                         {{"prompt", req.prompt},
                          {"max_tokens", req.max_tokens},
                          {"temperature", req.temperature},
                          {"top_p", req.top_p}});
        return {field<std::string>(r, "text"), field<std::size_t>(r, "token_count")};
    }

    AttentionDump attention(const ReasoningTrace& trace) const override {
        auto r = request("POST", "/attention", {{"trace_id", trace.id}, {"raw", trace.raw}});
        try {
            return attention_dump_from_json(r);
        } catch (const Error& e) {
            fail(ErrorCode::BackendUnavailable, std::string("bad /attention payload: ") + e.what());
        }
    }

private:
    template <typename T>
    static T field(const json& j, const char* name) {
        auto it = j.find(name);
        if (it == j.end()) fail(ErrorCode::BackendUnavailable, std::string("response lacks \"") + name + "\"");
        try {
            return it->template get<T>();
        } catch (const json::exception& e) {
            fail(ErrorCode::BackendUnavailable, std::string("bad \"") + name + "\": " + e.what());
        }
    }

    json request(const char* method, const std::string& path, const json& body) const {
        // one client per call: httplib clients are not safe to share across threads
        httplib::Client cli(opts_.url);
        cli.set_connection_timeout(opts_.connect_timeout_s, 0);
        cli.set_read_timeout(opts_.read_timeout_s, 0);
        auto res = std::string(method) == "GET" ? cli.Get(path)
                                                : cli.Post(path, body.dump(), "application/json");
        if (!res) {
            fail(ErrorCode::BackendUnavailable, opts_.url + path + ": " + httplib::to_string(res.error()));
        }
        json payload = json::parse(res->body, nullptr, false);
        if (res->status < 200 || res->status >= 300) {
            std::string code = payload.is_object() ? payload.value("code", std::string{}) : std::string{};
            std::string message = payload.is_object() ? payload.value("message", res->body) : res->body;
            auto ec = res->status == 413 ? ErrorCode::ContextTooLong : wire::error_code_from_name(code);
            fail(ec, path + " -> HTTP " + std::to_string(res->status) + ": " + message);
        }
        if (payload.is_discarded()) fail(ErrorCode::BackendUnavailable, path + ": response is not JSON");
        return payload;
    }

    AdapterOptions opts_;
};

/// Serves `oracle` over the wire protocol on `server`. The oracle must outlive
/// the server.
inline void install_oracle_routes(httplib::Server& server, const Oracle& oracle) {
    auto handle = [&oracle](auto&& body_fn) {
        return [&oracle, body_fn](const httplib::Request& req, httplib::Response& res) {
            try {
                json in = req.body.empty() ? json::object() : json::parse(req.body);
                res.set_content(body_fn(oracle, in).dump(), "application/json");
            } catch (const Error& e) {
                res.status = wire::http_status_for(e.code());
                res.set_content(json{{"code", wire::error_code_name(e.code())}, {"message", e.what()}}.dump(),
                                "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(json{{"code", "invalid_request"}, {"message", e.what()}}.dump(), "application/json");
            }
        };
    };

    server.Get("/capabilities", handle([](const Oracle& o, const json&) {
                   return wire::capabilities_to_json(o.capabilities());
               }));
    server.Post("/score", handle([](const Oracle& o, const json& in) {
                    auto r = o.score({in.at("query").get<std::string>(), in.at("context").get<std::string>(),
                                      in.at("answer").get<std::string>()});
                    return json{{"logprob_sum", r.logprob_sum}, {"n_answer_tokens", r.n_answer_tokens}};
                }));
    server.Post("/tokenize", handle([](const Oracle& o, const json& in) {
                    auto r = o.tokenize(in.at("text").get<std::string>());
                    json spans = json::array();
                    for (const auto& sp : r.spans) spans.push_back(json::array({sp.begin, sp.end}));
                    return json{{"count", r.count}, {"spans", std::move(spans)}};
                }));
    server.Post("/embed", handle([](const Oracle& o, const json& in) {
                    return json{{"vectors", o.embed(in.at("texts").get<std::vector<std::string>>())}};
                }));
    server.Post("/edit", handle([](const Oracle& o, const json& in) {
                    auto kind = in.at("kind").get<std::string>();
                    if (kind != "rewrite" && kind != "fuse") fail(ErrorCode::InvalidArgument, "unknown edit kind " + kind);
                    EditRequest req{kind == "rewrite" ? EditKind::Rewrite : EditKind::Fuse,
                                    in.at("inputs").get<std::vector<std::string>>(),
                                    in.value("template_id", std::string{})};
                    return json{{"text", o.apply_edit(req)}};
                }));
    server.Post("/refine", handle([](const Oracle& o, const json& in) {
                    return json{{"text", o.refine(in.at("query").get<std::string>(), in.at("original").get<std::string>(),
                                                  in.at("draft").get<std::string>())}};
                }));
    server.Post("/generate", handle([](const Oracle& o, const json& in) {
                    GenerateRequest req;
                    req.prompt = in.at("prompt").get<std::string>();
                    req.max_tokens = in.value("max_tokens", req.max_tokens);
                    req.temperature = in.value("temperature", req.temperature);
                    req.top_p = in.value("top_p", req.top_p);
                    auto r = o.generate(req);
                    return json{{"text", r.text}, {"token_count", r.token_count}};
                }));
    server.Post("/attention", handle([](const Oracle& o, const json& in) {
                    ReasoningTrace t;
                    t.id = in.value("trace_id", std::string{});
                    t.raw = in.at("raw").get<std::string>();
                    return to_json(o.attention(t));
                }));
}

}  // namespace crisp
