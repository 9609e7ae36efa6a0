#include "polynet/netzoo.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

namespace polynet {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

[[noreturn]] void syntax_error(std::size_t line, const std::string& what) {
    throw ArchError("line " + std::to_string(line) + ": " + what);
}

std::size_t parse_count(std::size_t line, const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != value.size() || value[0] == '-')
        syntax_error(line, "'" + key + "' expects a non-negative integer, got '" + value + "'");
    return static_cast<std::size_t>(v);
}

bool parse_bool(std::size_t line, const std::string& key, const std::string& value) {
    const std::string v = lower(value);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    syntax_error(line, "'" + key + "' expects true or false, got '" + value + "'");
}

// key=value arguments of one descriptor line.
class Args {
public:
    Args(std::size_t line, const std::vector<std::string>& tokens, std::size_t first) : line_(line) {
        for (std::size_t i = first; i < tokens.size(); ++i) {
            const auto eq = tokens[i].find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == tokens[i].size())
                syntax_error(line, "expected key=value, got '" + tokens[i] + "'");
            const std::string key = lower(tokens[i].substr(0, eq));
            if (values_.count(key)) syntax_error(line, "key '" + key + "' given twice");
            values_[key] = tokens[i].substr(eq + 1);
        }
    }

    std::optional<std::string> text(const std::string& key) {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        std::string v = it->second;
        values_.erase(it);
        return v;
    }
    std::optional<std::size_t> count(const std::string& key) {
        auto v = text(key);
        if (!v) return std::nullopt;
        return parse_count(line_, key, *v);
    }
    std::optional<bool> flag(const std::string& key) {
        auto v = text(key);
        if (!v) return std::nullopt;
        return parse_bool(line_, key, *v);
    }
    void finish(const std::string& directive) const {
        if (!values_.empty())
            syntax_error(line_, "unknown key '" + values_.begin()->first + "' for '" + directive + "'");
    }

private:
    std::size_t line_;
    std::map<std::string, std::string> values_;
};

Shape parse_input_shape(std::size_t line, const std::string& text) {
    Shape shape;
    std::stringstream ss(lower(text));
    std::string part;
    while (std::getline(ss, part, 'x')) shape.push_back(parse_count(line, "input", part));
    if ((shape.size() != 1 && shape.size() != 3) ||
        std::any_of(shape.begin(), shape.end(), [](std::size_t e) { return e == 0; }))
        syntax_error(line, "input must be CxHxW or D with positive extents, got '" + text + "'");
    return shape;
}

std::string chain_prefix(const Stage& stage, std::size_t index, const LayerRecord& layer) {
    std::string s = "layer " + layer_label(stage, index);
    if (layer.line) s += " (line " + std::to_string(layer.line) + ")";
    return s + ": ";
}

std::size_t window_extent(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
    return (n + 2 * pad - k) / stride + 1;
}

// Resolves extents and returns the outgoing feature shape.
FeatureShape apply_layer(const Stage& stage, std::size_t index, LayerRecord& layer, const FeatureShape& in,
                         bool last) {
    auto fail = [&](const std::string& why) { throw ArchError(chain_prefix(stage, index, layer) + why); };
    if (layer.kind == LayerKind::head && !last) fail("the classifier head must be the last layer");
    if (layer.kind != LayerKind::head && last) fail("the last layer must be the classifier head");
    if (layer.in && layer.in != in.c)
        fail("expects " + std::to_string(layer.in) + " input channels but receives " + std::to_string(in.c));
    layer.in = in.c;

    FeatureShape out = in;
    switch (layer.kind) {
    case LayerKind::conv: {
        if (layer.out == 0) fail("conv needs out > 0");
        if (layer.k == 0 || layer.stride == 0) fail("conv needs positive k and stride");
        if (layer.k > in.h + 2 * layer.pad || layer.k > in.w + 2 * layer.pad)
            fail("kernel " + std::to_string(layer.k) + " exceeds the padded " + std::to_string(in.h) + "x" +
                 std::to_string(in.w) + " input");
        out = {layer.out, window_extent(in.h, layer.k, layer.stride, layer.pad),
               window_extent(in.w, layer.k, layer.stride, layer.pad)};
        break;
    }
    case LayerKind::batchnorm: layer.out = in.c; break;
    case LayerKind::dense:
        if (layer.out == 0) fail("dense needs out > 0");
        out.c = layer.out;
        break;
    case LayerKind::head:
        if (layer.out == 0) fail("head needs classes > 0");
        if (in.hw() != 1)
            fail("head needs pooled features, got " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                 " positions");
        layer.bias = true;
        out.c = layer.out;
        break;
    case LayerKind::pool:
        layer.out = in.c;
        if (layer.global) {
            out.h = out.w = 1;
        } else {
            if (layer.k == 0 || layer.stride == 0) fail("pool needs positive k and stride");
            if (layer.k > in.h + 2 * layer.pad || layer.k > in.w + 2 * layer.pad)
                fail("pool window exceeds the input");
            out.h = window_extent(in.h, layer.k, layer.stride, layer.pad);
            out.w = window_extent(in.w, layer.k, layer.stride, layer.pad);
        }
        break;
    case LayerKind::block: {
        BlockSpec& b = layer.block;
        b.in_channels = in.c;
        if (b.out_channels == 0) b.out_channels = in.c;
        b.spatial = in.hw();
        try {
            validate(b);
        } catch (const std::invalid_argument& e) {
            fail(e.what());
        }
        layer.out = b.out();
        out.c = b.out();
        if (b.stride != 1) {
            out.h = (in.h - 1) / b.stride + 1;
            out.w = (in.w - 1) / b.stride + 1;
        }
        break;
    }
    }
    return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

FeatureShape ArchSpec::input_features() const {
    if (input.size() == 1) return {input[0], 1, 1};
    if (input.size() == 3) return {input[0], input[1], input[2]};
    throw ArchError("input must be CxHxW or D");
}

std::size_t ArchSpec::classes() const {
    if (stages.empty() || stages.back().layers.empty() || stages.back().layers.back().kind != LayerKind::head)
        throw ArchError("architecture has no classifier head");
    return stages.back().layers.back().out;
}

std::string layer_label(const Stage& stage, std::size_t index) { return stage.name + "." + std::to_string(index); }

std::vector<FeatureShape> trace_shapes(const ArchSpec& spec) {
    ArchSpec copy = spec;
    std::vector<FeatureShape> shapes;
    FeatureShape s = copy.input_features();
    std::size_t total = 0;
    for (const auto& st : copy.stages) total += st.layers.size();
    std::size_t seen = 0;
    for (auto& st : copy.stages)
        for (std::size_t i = 0; i < st.layers.size(); ++i) {
            s = apply_layer(st, i, st.layers[i], s, ++seen == total);
            shapes.push_back(s);
        }
    return shapes;
}

void validate_arch(ArchSpec& spec) {
    if (spec.name.empty()) spec.name = "unnamed";
    FeatureShape s = spec.input_features();
    std::size_t total = 0;
    for (const auto& st : spec.stages) {
        if (st.name.empty()) throw ArchError("stage names must be non-empty");
        total += st.layers.size();
    }
    if (total == 0) throw ArchError("architecture has no layers");
    for (std::size_t a = 0; a < spec.stages.size(); ++a)
        for (std::size_t b = 0; b < a; ++b)
            if (spec.stages[a].name == spec.stages[b].name)
                throw ArchError("stage name '" + spec.stages[a].name + "' used twice");
    std::size_t seen = 0;
    for (auto& st : spec.stages)
        for (std::size_t i = 0; i < st.layers.size(); ++i) s = apply_layer(st, i, st.layers[i], s, ++seen == total);
}

ArchSpec parse_arch(const std::string& text) {
    ArchSpec spec;
    bool have_input = false;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;

    bool implicit_stem = false;
    auto current_stage = [&]() -> Stage& {
        if (spec.stages.empty()) {
            spec.stages.push_back({"stem", {}});
            implicit_stem = true;
        }
        return spec.stages.back();
    };

    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::istringstream ls(raw);
        std::vector<std::string> tokens;
        for (std::string t; ls >> t;) tokens.push_back(t);
        if (tokens.empty()) continue;
        const std::string directive = lower(tokens[0]);

        if (directive == "name") {
            if (tokens.size() != 2) syntax_error(line_no, "'name' takes one word");
            spec.name = tokens[1];
            continue;
        }
        if (directive == "input") {
            if (tokens.size() != 2) syntax_error(line_no, "'input' takes one shape such as 3x32x32");
            if (have_input) syntax_error(line_no, "input given twice");
            spec.input = parse_input_shape(line_no, tokens[1]);
            have_input = true;
            continue;
        }

        Args args(line_no, tokens, 1);
        if (directive == "stage") {
            auto name = args.text("name");
            args.finish(directive);
            if (!name) syntax_error(line_no, "'stage' needs name=");
            // An empty implicit stem is replaced by the named stage.
            if (implicit_stem && spec.stages.back().layers.empty()) spec.stages.pop_back();
            implicit_stem = false;
            spec.stages.push_back({*name, {}});
            continue;
        }

        LayerRecord layer;
        layer.line = line_no;
        if (directive == "conv") {
            layer.kind = LayerKind::conv;
            layer.k = args.count("k").value_or(3);
            layer.out = args.count("out").value_or(0);
            layer.in = args.count("in").value_or(0);
            layer.stride = args.count("stride").value_or(1);
            layer.pad = args.count("pad").value_or(layer.k / 2);
            layer.bias = args.flag("bias").value_or(false);
            if (layer.out == 0) syntax_error(line_no, "conv needs out=");
        } else if (directive == "bn" || directive == "batchnorm") {
            layer.kind = LayerKind::batchnorm;
        } else if (directive == "dense") {
            layer.kind = LayerKind::dense;
            layer.out = args.count("out").value_or(0);
            layer.in = args.count("in").value_or(0);
            layer.bias = args.flag("bias").value_or(true);
            if (layer.out == 0) syntax_error(line_no, "dense needs out=");
        } else if (directive == "pool") {
            layer.kind = LayerKind::pool;
            const std::string kind = lower(args.text("kind").value_or("avg"));
            if (kind == "avg") layer.pool = PoolKind::avg;
            else if (kind == "max") layer.pool = PoolKind::max;
            else syntax_error(line_no, "unknown pool kind '" + kind + "'");
            const auto k = args.count("k");
            layer.global = !k;
            layer.k = k.value_or(1);
            layer.stride = args.count("stride").value_or(layer.k);
            layer.pad = args.count("pad").value_or(0);
            if (layer.global && (layer.stride != 1 || layer.pad != 0))
                syntax_error(line_no, "global pooling takes no stride or pad");
        } else if (directive == "block") {
            layer.kind = LayerKind::block;
            BlockSpec& b = layer.block;
            const auto kind = args.text("kind");
            if (!kind) syntax_error(line_no, "block needs kind=");
            const auto parsed = parse_block_kind(lower(*kind));
            if (!parsed) syntax_error(line_no, "unknown block kind '" + *kind + "'");
            b.kind = *parsed;
            b.out_channels = args.count("channels").value_or(0);
            b.stride = args.count("stride").value_or(1);
            b.degree = args.count("degree").value_or(2);
            b.ratio = args.count("ratio").value_or(0);
            b.omega = args.count("omega").value_or(0);
            b.bias = args.flag("bias").value_or(true);
            if (auto r = args.text("realization")) {
                const auto real = parse_realization(lower(*r));
                if (!real) syntax_error(line_no, "unknown realization '" + *r + "'");
                b.realization = *real;
            }
            if (auto m = args.text("mode")) {
                const std::string mode = lower(*m);
                if (mode == "identity") b.mode = ActivationMode::identity;
                else if (mode == "standard") b.mode = ActivationMode::standard;
                else syntax_error(line_no, "unknown mode '" + *m + "'");
            }
        } else if (directive == "head") {
            layer.kind = LayerKind::head;
            layer.out = args.count("classes").value_or(0);
            layer.in = args.count("in").value_or(0);
            if (layer.out == 0) syntax_error(line_no, "head needs classes=");
        } else {
            syntax_error(line_no, "unknown directive '" + tokens[0] + "'");
        }
        args.finish(directive);
        current_stage().layers.push_back(layer);
    }

    if (!have_input) throw ArchError("descriptor has no input line");
    if (spec.stages.empty()) throw ArchError("descriptor has no layers");
    for (const auto& st : spec.stages)
        if (st.layers.empty()) throw ArchError("stage '" + st.name + "' is empty");
    validate_arch(spec);
    return spec;
}

std::string format_arch(const ArchSpec& spec) {
    std::ostringstream out;
    out << "name " << spec.name << "\ninput ";
    for (std::size_t i = 0; i < spec.input.size(); ++i) out << (i ? "x" : "") << spec.input[i];
    out << "\n";
    for (const auto& st : spec.stages) {
        out << "stage name=" << st.name << "\n";
        for (const auto& l : st.layers) {
            switch (l.kind) {
            case LayerKind::conv:
                out << "conv k=" << l.k << " out=" << l.out << " stride=" << l.stride << " pad=" << l.pad
                    << " bias=" << bool_text(l.bias);
                break;
            case LayerKind::batchnorm: out << "bn"; break;
            case LayerKind::dense: out << "dense out=" << l.out << " bias=" << bool_text(l.bias); break;
            case LayerKind::pool:
                out << "pool kind=" << (l.pool == PoolKind::avg ? "avg" : "max");
                if (!l.global) out << " k=" << l.k << " stride=" << l.stride << " pad=" << l.pad;
                break;
            case LayerKind::block: {
                const BlockSpec& b = l.block;
                out << "block kind=" << to_string(b.kind) << " channels=" << b.out();
                if (b.kind == BlockKind::pdc || b.kind == BlockKind::pinet) out << " degree=" << b.degree;
                if (b.stride != 1) out << " stride=" << b.stride;
                if (b.ratio) out << " ratio=" << b.ratio;
                if (b.omega) out << " omega=" << b.omega;
                if (b.realization != Realization::dense) out << " realization=" << to_string(b.realization);
                if (b.mode == ActivationMode::identity) out << " mode=identity";
                if (!b.bias) out << " bias=false";
                break;
            }
            case LayerKind::head: out << "head classes=" << l.out; break;
            }
            out << "\n";
        }
    }
    return out.str();
}

std::size_t layer_param_count(const LayerRecord& l) {
    switch (l.kind) {
    case LayerKind::conv: return l.k * l.k * l.in * l.out + (l.bias ? l.out : 0);
    case LayerKind::batchnorm: return 2 * l.out;
    case LayerKind::dense:
    case LayerKind::head: return l.in * l.out + (l.bias ? l.out : 0);
    case LayerKind::pool: return 0;
    case LayerKind::block: return block_param_count(l.block);
    }
    return 0;
}

std::size_t count_params(const ArchSpec& spec) {
    std::size_t total = 0;
    for (const auto& st : spec.stages)
        for (const auto& l : st.layers) total += layer_param_count(l);
    return total;
}

// ---------------------------------------------------------------------------
// Builtins

namespace {

std::string resnet_text(const std::string& name, const std::vector<int>& depth, const std::string& block,
                        bool imagenet, std::size_t classes) {
    std::ostringstream t;
    t << "name " << name << "\n";
    if (imagenet) {
        t << "input 3x224x224\nstage name=stem\nconv k=7 out=64 stride=2 pad=3\nbn\npool kind=max k=3 stride=2 pad=1\n";
    } else {
        t << "input 3x32x32\nstage name=stem\nconv k=3 out=64 stride=1 pad=1\nbn\n";
    }
    std::size_t width = 64;
    for (std::size_t s = 0; s < depth.size(); ++s) {
        t << "stage name=layer" << s + 1 << "\n";
        for (int b = 0; b < depth[s]; ++b) {
            t << "block " << block << " channels=" << width << " realization=conv3x3";
            if (b == 0 && s > 0) t << " stride=2";
            t << "\n";
        }
        width *= 2;
    }
    t << "stage name=classifier\npool kind=avg\nhead classes=" << classes << "\n";
    return t.str();
}

std::string poly_cifar_text(const std::string& name, const std::string& kind, std::size_t degree, std::size_t w) {
    std::ostringstream t;
    t << "name " << name << "\ninput 3x32x32\nstage name=stem\nconv k=3 out=" << w << " stride=1 pad=1\nbn\n";
    for (std::size_t s = 0; s < 4; ++s) {
        t << "stage name=layer" << s + 1 << "\n";
        for (int b = 0; b < 2; ++b) {
            t << "block kind=" << kind << " degree=" << degree << " channels=" << (w << s) << " realization=conv3x3";
            if (b == 0 && s > 0) t << " stride=2";
            t << "\n";
        }
    }
    t << "stage name=classifier\npool kind=avg\nhead classes=100\n";
    return t.str();
}

}  // namespace

std::optional<std::string> builtin_arch_text(const std::string& raw_name) {
    const std::string name = lower(raw_name);
    if (name == "resnet18-cifar100") return resnet_text(name, {2, 2, 2, 2}, "kind=residual1", false, 100);
    if (name == "resnet34-cifar100") return resnet_text(name, {3, 4, 6, 3}, "kind=residual1", false, 100);
    if (name == "senet18-cifar100" || name == "senet18")
        return resnet_text("senet18-cifar100", {2, 2, 2, 2}, "kind=se2 ratio=16", false, 100);
    if (name == "resnet18-imagenet") return resnet_text(name, {2, 2, 2, 2}, "kind=residual1", true, 1000);

    std::smatch m;
    static const std::regex poly(R"((pdc|pinet)(\d+)-w(\d+))");
    if (std::regex_match(name, m, poly)) {
        const std::size_t degree = std::stoul(m[2]), width = std::stoul(m[3]);
        if (degree < 1 || width < 1) return std::nullopt;
        return poly_cifar_text(name, m[1], degree, width);
    }
    static const std::regex vec_poly(R"(vec(\d+)-pdc(\d+)-w(\d+))");
    if (std::regex_match(name, m, vec_poly)) {
        std::ostringstream t;
        t << "name " << name << "\ninput " << m[1] << "\nstage name=body\nblock kind=pdc degree=" << m[2]
          << " channels=" << m[3] << "\nstage name=classifier\nhead classes=2\n";
        return t.str();
    }
    static const std::regex vec_affine(R"(vec(\d+)-affine)");
    if (std::regex_match(name, m, vec_affine))
        return "name " + name + "\ninput " + std::string(m[1]) + "\nstage name=classifier\nhead classes=2\n";
    return std::nullopt;
}

std::vector<std::string> builtin_arch_names() {
    return {"resnet18-cifar100", "resnet34-cifar100", "senet18-cifar100", "resnet18-imagenet",
            "pdc<N>-w<W>",       "pinet<N>-w<W>",     "vec<D>-pdc<N>-w<W>", "vec<D>-affine"};
}

ArchSpec load_arch(const std::string& name_or_path) {
    if (auto text = builtin_arch_text(name_or_path)) return parse_arch(*text);
    std::ifstream in(name_or_path);
    if (!in) throw ArchError("unknown architecture '" + name_or_path + "' (not a builtin name or readable file)");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_arch(ss.str());
}

// ---------------------------------------------------------------------------
// Assembly

namespace {

class NetBuilder {
public:
    NetBuilder(Graph& g, std::uint64_t seed, InitScheme scheme) : g_(g), rng_(seed), scheme_(scheme) {}

    Var weight(const std::string& name, Shape shape, std::size_t fan_in, bool zero = false) {
        if (zero && scheme_ == InitScheme::training) return g_.parameter(name, Tensor::zeros(shape));
        return g_.parameter(name, rng_.normal_tensor(shape, 1.0 / std::sqrt(static_cast<double>(fan_in))));
    }
    Var vector(const std::string& name, std::size_t n, bool zero_when_training = true) {
        if (zero_when_training && scheme_ == InitScheme::training) return g_.parameter(name, Tensor::zeros({n}));
        return g_.parameter(name, rng_.normal_tensor({n}, 1.0));
    }

    // [hw x c] -> [co x h' x w'] convolution -> [h'w' x co]
    Var conv(const Var& x, const FeatureShape& in, std::size_t co, std::size_t stride, std::size_t pad,
             const Var& kernel) {
        const Var img = reshape(transpose(x), {in.c, in.h, in.w});
        const Var y = conv2d(img, kernel, stride, pad);
        const Shape& ys = y.shape();
        return transpose(reshape(y, {co, ys[1] * ys[2]}));
    }

    Var batchnorm(const Var& x, std::size_t c, const std::string& prefix) {
        const Var gamma = g_.parameter(prefix + ".gamma", Tensor::ones({c}));
        const Var beta = g_.parameter(prefix + ".beta", Tensor::zeros({c}));
        const std::size_t m = x.shape()[0];
        return hadamard(x, expr::broadcast_rows(gamma, m)) + expr::broadcast_rows(beta, m);
    }

    // Block linear map in the conv3x3 realization: 3x3 conv then normalization.
    Var map3(const Var& x, const FeatureShape& in, std::size_t co, std::size_t stride, const std::string& name,
             bool zero = false) {
        const Var kernel = weight(name + ".kernel", {co, in.c, 3, 3}, in.c * 9, zero);
        return batchnorm(conv(x, in, co, stride, 1, kernel), co, name + ".bn");
    }
    Var map1(const Var& x, const FeatureShape& in, std::size_t co, std::size_t stride, const std::string& name) {
        const Var kernel = weight(name + ".kernel", {co, in.c, 1, 1}, in.c);
        return batchnorm(conv(x, in, co, stride, 0, kernel), co, name + ".bn");
    }

    Var shortcut(const Var& x, const FeatureShape& in, const BlockSpec& b, const std::string& p) {
        if (in.c == b.out() && b.stride == 1) return x;
        return map1(x, in, b.out(), b.stride, p + ".projection");
    }

    Var gate(const Var& u, const BlockSpec& b, const std::string& p) {
        const std::size_t o = b.out();
        return expr::se_apply(u, [&](const Var& pooled) {
            if (b.compression() <= 1) return matmul(pooled, weight(p + ".C2", {o, o}, o));
            const std::size_t k = b.reduced();
            return matmul(matmul(pooled, weight(p + ".C2", {o, k}, o)), weight(p + ".C2_expand", {k, o}, k));
        });
    }

    Var conv3_block(const Var& x, const FeatureShape& in, const BlockSpec& b, const std::string& p) {
        const std::size_t o = b.out(), s = b.stride;
        const FeatureShape mid{o, (in.h - 1) / s + 1, (in.w - 1) / s + 1};
        switch (b.kind) {
        case BlockKind::residual1: {
            const Var u = map3(map3(x, in, o, s, p + ".C1"), mid, o, 1, p + ".C2");
            return shortcut(x, in, b, p) + u;
        }
        case BlockKind::se2: {
            const Var u = map3(map3(x, in, o, s, p + ".C1"), mid, o, 1, p + ".C1b");
            return shortcut(x, in, b, p) + gate(u, b, p);
        }
        case BlockKind::sk2: {
            const FeatureShape split{in.c, mid.h, mid.w};
            const Var a = map3(x, in, in.c, s, p + ".U1") + map1(x, in, in.c, s, p + ".U2");
            return shortcut(x, in, b, p) + gate(map3(a, split, o, 1, p + ".C1"), b, p);
        }
        case BlockKind::pinet: {
            const std::size_t omega = b.omega ? b.omega : o, m = mid.hw();
            std::vector<Var> a, sm, bias;
            for (std::size_t n = 1; n <= b.degree; ++n) {
                const std::string sfx = std::to_string(n);
                a.push_back(map3(x, in, o, s, p + ".A" + sfx));
                const Var big_b = weight(p + ".B" + sfx, {omega, o}, omega);
                const Var small_b = vector(p + ".b" + sfx, omega, n >= 2);
                bias.push_back(replicate_rows(matmul(expr::as_row(small_b), big_b), m));
            }
            return expr::pinet_apply<Var>(
                b.degree, [&](std::size_t n) { return a[n - 1]; },
                [&](std::size_t n, const Var& prev) { return map3(prev, mid, o, 1, p + ".S" + std::to_string(n), true); },
                [&](std::size_t n) { return bias[n - 1]; });
        }
        case BlockKind::pdc: {
            return expr::pdc_apply<Var>(
                b.degree,
                [&](std::size_t n, std::size_t k) {
                    return map3(x, in, o, s, p + ".C" + std::to_string(k) + "_" + std::to_string(n), n >= 2 && k == n);
                },
                std::nullopt);
        }
        default: throw ArchError("block " + std::string(to_string(b.kind)) + " has no conv3x3 realization");
        }
    }

    Var layer(const Var& x, const FeatureShape& in, const LayerRecord& l, const std::string& p) {
        switch (l.kind) {
        case LayerKind::conv: {
            const Var kernel = weight(p + ".kernel", {l.out, l.in, l.k, l.k}, l.in * l.k * l.k);
            Var y = conv(x, in, l.out, l.stride, l.pad, kernel);
            if (l.bias) y = y + expr::broadcast_rows(vector(p + ".bias", l.out), y.shape()[0]);
            return y;
        }
        case LayerKind::batchnorm: return batchnorm(x, l.out, p);
        case LayerKind::dense:
        case LayerKind::head: {
            Var y = matmul(x, weight(p + ".weight", {l.in, l.out}, l.in));
            if (l.bias) y = y + expr::broadcast_rows(vector(p + ".bias", l.out), in.hw());
            return y;
        }
        case LayerKind::pool: {
            if (l.pool == PoolKind::max) throw ArchError("max pooling has no differentiable form; cannot build");
            if (l.global) return global_avg_pool(x);
            Tensor kernel({l.in, l.in, l.k, l.k});
            const double w = 1.0 / static_cast<double>(l.k * l.k);
            for (std::size_t c = 0; c < l.in; ++c)
                for (std::size_t i = 0; i < l.k * l.k; ++i) kernel[(c * l.in + c) * l.k * l.k + i] = w;
            return conv(x, in, l.in, l.stride, l.pad, g_.constant(std::move(kernel)));
        }
        case LayerKind::block: {
            if (l.block.realization == Realization::conv3x3) return conv3_block(x, in, l.block, p);
            return block_graph(g_, x, l.block, sample_block_params(l.block, rng_, scheme_), p);
        }
        }
        throw ArchError("unknown layer kind");
    }

private:
    Graph& g_;
    Rng rng_;
    InitScheme scheme_;
};

}  // namespace

Graph build_network(const ArchSpec& spec, std::uint64_t seed, InitScheme scheme) {
    ArchSpec checked = spec;
    validate_arch(checked);
    Graph g;
    NetBuilder nb(g, seed, scheme);
    FeatureShape s = checked.input_features();
    const Var input = g.input(checked.input);
    Var x = checked.input.size() == 1 ? reshape(input, {1, s.c}) : transpose(reshape(input, {s.c, s.hw()}));
    const auto shapes = trace_shapes(checked);
    std::size_t flat = 0;
    for (const auto& st : checked.stages)
        for (std::size_t i = 0; i < st.layers.size(); ++i) {
            const std::string label = layer_label(st, i);
            try {
                x = nb.layer(x, s, st.layers[i], label);
            } catch (const std::exception& e) {
                throw ArchError(chain_prefix(st, i, st.layers[i]) + e.what());
            }
            s = shapes[flat++];
        }
    g.set_output(x);
    return g;
}

}  // namespace polynet
