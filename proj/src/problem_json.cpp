#include "dadp/problem_json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dadp {

using nlohmann::json;

namespace {

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double number_or_inf(const json& j, const std::string& where) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "inf" || s == "+inf") return kInf;
        if (s == "-inf") return -kInf;
    }
    throw SchemaError(where + ": expected a number or \"inf\"/\"-inf\"");
}

json inf_aware(double v) {
    if (v == kInf) return "inf";
    if (v == -kInf) return "-inf";
    return v;
}

Vec parse_vec(const json& j, const std::string& where) {
    if (!j.is_array()) throw SchemaError(where + ": expected an array");
    Vec v;
    for (size_t k = 0; k < j.size(); ++k)
        v.push_back(number_or_inf(j[k], where + "[" + std::to_string(k) + "]"));
    return v;
}

json dump_vec(const Vec& v) {
    json j = json::array();
    for (double x : v) j.push_back(inf_aware(x));
    return j;
}

Mat parse_mat(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
        throw SchemaError(where + ": expected {rows, cols, data}");
    Mat m(j["rows"].get<int>(), j["cols"].get<int>());
    Vec data = parse_vec(j["data"], where + ".data");
    if (static_cast<int>(data.size()) != m.rows * m.cols)
        throw SchemaError(where + ": data length must be rows*cols");
    m.a = std::move(data);
    return m;
}

json dump_mat(const Mat& m) {
    return json{{"rows", m.rows}, {"cols", m.cols}, {"data", dump_vec(m.a)}};
}

template <class T, class Parse>
Stagewise<T> parse_stagewise(const json& j, const std::string& where, Parse&& parse) {
    if (!j.is_array() || j.empty()) throw SchemaError(where + ": expected a non-empty array");
    Stagewise<T> out;
    for (size_t k = 0; k < j.size(); ++k)
        out.v.push_back(parse(j[k], where + "[" + std::to_string(k) + "]"));
    return out;
}

CostTerm parse_cost_term(const json& j, const std::string& where) {
    std::string kind = j.value("kind", "");
    if (kind == "quad_control") {
        QuadControlTerm t;
        t.coeff = parse_vec(j.at("coeff"), where + ".coeff");
        t.lin = j.contains("lin") ? parse_vec(j["lin"], where + ".lin")
                                  : Vec(t.coeff.size(), 0.0);
        if (j.contains("scale")) {
            NoiseScale s;
            s.coord = j["scale"].at("coord").get<int>();
            s.base = j["scale"].value("base", 1.0);
            s.slope = j["scale"].value("slope", 0.0);
            t.scale = s;
        }
        return t;
    }
    if (kind == "quad_state") {
        QuadStateTerm t;
        t.coeff = parse_vec(j.at("coeff"), where + ".coeff");
        t.ref = j.contains("ref") ? parse_vec(j["ref"], where + ".ref") : Vec(t.coeff.size(), 0.0);
        if (t.ref.size() != t.coeff.size())
            throw SchemaError(where + ": ref and coeff lengths differ");
        return t;
    }
    if (kind == "lin_state") {
        LinStateTerm t;
        t.coeff = parse_vec(j.at("coeff"), where + ".coeff");
        return t;
    }
    if (kind == "pwl_control") {
        PwlControlTerm t;
        for (const auto& pj : j.at("pieces"))
            t.pieces.push_back({parse_vec(pj.at("a"), where + ".a"), pj.value("b", 0.0)});
        if (t.pieces.empty()) throw SchemaError(where + ": pwl needs at least one piece");
        return t;
    }
    if (kind == "const") {
        return ConstTerm{j.at("value").get<double>()};
    }
    throw SchemaError(where + ": unknown cost term kind '" + kind + "'");
}

json dump_cost_term(const CostTerm& term) {
    json j;
    if (const auto* qc = std::get_if<QuadControlTerm>(&term)) {
        j["kind"] = "quad_control";
        j["coeff"] = dump_vec(qc->coeff);
        j["lin"] = dump_vec(qc->lin);
        if (qc->scale)
            j["scale"] = {{"coord", qc->scale->coord}, {"base", qc->scale->base}, {"slope", qc->scale->slope}};
    } else if (const auto* qs = std::get_if<QuadStateTerm>(&term)) {
        j["kind"] = "quad_state";
        j["coeff"] = dump_vec(qs->coeff);
        j["ref"] = dump_vec(qs->ref);
    } else if (const auto* ls = std::get_if<LinStateTerm>(&term)) {
        j["kind"] = "lin_state";
        j["coeff"] = dump_vec(ls->coeff);
    } else if (const auto* pw = std::get_if<PwlControlTerm>(&term)) {
        j["kind"] = "pwl_control";
        json pieces = json::array();
        for (const auto& [a, b] : pw->pieces) pieces.push_back({{"a", dump_vec(a)}, {"b", b}});
        j["pieces"] = pieces;
    } else if (const auto* c = std::get_if<ConstTerm>(&term)) {
        j["kind"] = "const";
        j["value"] = c->value;
    }
    return j;
}

CostTerms parse_cost_terms(const json& j, const std::string& where) {
    if (!j.is_array()) throw SchemaError(where + ": expected an array of cost terms");
    CostTerms terms;
    for (size_t k = 0; k < j.size(); ++k)
        terms.push_back(parse_cost_term(j[k], where + "[" + std::to_string(k) + "]"));
    return terms;
}

int parse_partition_entry(const json& j, const std::string& where) {
    std::string s = j.get<std::string>();
    if (s == "global") return NoisePartition::kGlobal;
    if (s.rfind("local:", 0) == 0) return std::stoi(s.substr(6));
    throw SchemaError(where + ": partition entries are \"global\" or \"local:<unit>\"");
}

ProblemSpec parse_spec(const json& root) {
    ProblemSpec spec;
    spec.noise.horizon = root.at("horizon").get<int>();
    spec.coupling_dim = root.at("coupling_dimension").get<int>();

    const json& jn = root.at("noise");
    spec.noise.dim = jn.at("dimension").get<int>();
    for (size_t k = 0; k < jn.at("partition").size(); ++k)
        spec.noise.partition.owner.push_back(
            parse_partition_entry(jn["partition"][k], "noise.partition"));
    for (size_t t = 0; t < jn.at("stages").size(); ++t) {
        const json& js = jn["stages"][t];
        StageDist st;
        for (const auto& pj : js.at("points"))
            st.points.push_back(parse_vec(pj, "noise.stages.points"));
        st.probs = parse_vec(js.at("probs"), "noise.stages.probs");
        spec.noise.stages.push_back(std::move(st));
    }

    for (size_t i = 0; i < root.at("subsystems").size(); ++i) {
        const json& js = root["subsystems"][i];
        std::string where = "subsystems[" + std::to_string(i) + "]";
        SubsystemSpec sub;
        sub.name = js.value("name", "unit" + std::to_string(i));
        sub.state_dim = js.at("state_dim").get<int>();
        sub.control_dim = js.at("control_dim").get<int>();
        sub.x0 = parse_vec(js.at("x0"), where + ".x0");
        const json& jb = js.at("bounds");
        auto pv = [&](const json& v, const std::string& w2) { return parse_vec(v, w2); };
        sub.x_lo = parse_stagewise<Vec>(jb.at("state_lower"), where + ".state_lower", pv);
        sub.x_hi = parse_stagewise<Vec>(jb.at("state_upper"), where + ".state_upper", pv);
        sub.u_lo = parse_stagewise<Vec>(jb.at("control_lower"), where + ".control_lower", pv);
        sub.u_hi = parse_stagewise<Vec>(jb.at("control_upper"), where + ".control_upper", pv);
        const json& jd = js.at("dynamics");
        auto pm = [&](const json& v, const std::string& w2) { return parse_mat(v, w2); };
        sub.dynamics.A = parse_stagewise<Mat>(jd.at("A"), where + ".A", pm);
        sub.dynamics.B = parse_stagewise<Mat>(jd.at("B"), where + ".B", pm);
        sub.dynamics.C = parse_stagewise<Mat>(jd.at("C"), where + ".C", pm);
        sub.dynamics.b = parse_stagewise<Vec>(jd.at("b"), where + ".b", pv);
        sub.cost = parse_stagewise<CostTerms>(
            js.at("cost"), where + ".cost",
            [&](const json& v, const std::string& w2) { return parse_cost_terms(v, w2); });
        sub.final_cost = parse_cost_terms(js.at("final_cost"), where + ".final_cost");
        const json& jc = js.at("coupling");
        sub.coupling.P = parse_stagewise<Mat>(jc.at("P"), where + ".P", pm);
        sub.coupling.Q = parse_stagewise<Mat>(jc.at("Q"), where + ".Q", pm);
        sub.coupling.R = parse_stagewise<Mat>(jc.at("R"), where + ".R", pm);
        sub.coupling.r = parse_stagewise<Vec>(jc.at("r"), where + ".r", pv);
        spec.subsystems.push_back(std::move(sub));
    }
    return spec;
}

} // namespace

ProblemLoadResult parse_problem_json(const std::string& text) {
    ProblemLoadResult out;
    json root = json::parse(text, nullptr, false);
    if (root.is_discarded()) {
        out.report.violations.push_back({-1, -1, "json", "document is not valid JSON"});
        return out;
    }
    try {
        ProblemSpec spec = parse_spec(root);
        out.report = validate_problem(spec);
        out.spec = std::move(spec);
    } catch (const SchemaError& e) {
        out.report.violations.push_back({-1, -1, "schema", e.what()});
    } catch (const json::exception& e) {
        out.report.violations.push_back({-1, -1, "schema", e.what()});
    }
    return out;
}

ProblemLoadResult load_problem_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        ProblemLoadResult out;
        out.report.violations.push_back({-1, -1, "file", "cannot open " + path});
        return out;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_problem_json(ss.str());
}

std::string problem_to_json(const ProblemSpec& spec) {
    json root;
    root["horizon"] = spec.noise.horizon;
    root["coupling_dimension"] = spec.coupling_dim;
    json jn;
    jn["dimension"] = spec.noise.dim;
    json part = json::array();
    for (int o : spec.noise.partition.owner)
        part.push_back(o == NoisePartition::kGlobal ? std::string("global")
                                                    : "local:" + std::to_string(o));
    jn["partition"] = part;
    json stages = json::array();
    for (const auto& st : spec.noise.stages) {
        json js;
        json pts = json::array();
        for (const auto& p : st.points) pts.push_back(dump_vec(p));
        js["points"] = pts;
        js["probs"] = dump_vec(st.probs);
        stages.push_back(js);
    }
    jn["stages"] = stages;
    root["noise"] = jn;

    json subs = json::array();
    for (const auto& sub : spec.subsystems) {
        json js;
        js["name"] = sub.name;
        js["state_dim"] = sub.state_dim;
        js["control_dim"] = sub.control_dim;
        js["x0"] = dump_vec(sub.x0);
        auto dump_sw_vec = [](const Stagewise<Vec>& sw) {
            json a = json::array();
            for (const auto& v : sw.v) a.push_back(dump_vec(v));
            return a;
        };
        auto dump_sw_mat = [](const Stagewise<Mat>& sw) {
            json a = json::array();
            for (const auto& m : sw.v) a.push_back(dump_mat(m));
            return a;
        };
        js["bounds"] = {{"state_lower", dump_sw_vec(sub.x_lo)},
                        {"state_upper", dump_sw_vec(sub.x_hi)},
                        {"control_lower", dump_sw_vec(sub.u_lo)},
                        {"control_upper", dump_sw_vec(sub.u_hi)}};
        js["dynamics"] = {{"A", dump_sw_mat(sub.dynamics.A)},
                          {"B", dump_sw_mat(sub.dynamics.B)},
                          {"C", dump_sw_mat(sub.dynamics.C)},
                          {"b", dump_sw_vec(sub.dynamics.b)}};
        json costs = json::array();
        for (const auto& terms : sub.cost.v) {
            json tj = json::array();
            for (const auto& term : terms) tj.push_back(dump_cost_term(term));
            costs.push_back(tj);
        }
        js["cost"] = costs;
        json fc = json::array();
        for (const auto& term : sub.final_cost) fc.push_back(dump_cost_term(term));
        js["final_cost"] = fc;
        js["coupling"] = {{"P", dump_sw_mat(sub.coupling.P)},
                          {"Q", dump_sw_mat(sub.coupling.Q)},
                          {"R", dump_sw_mat(sub.coupling.R)},
                          {"r", dump_sw_vec(sub.coupling.r)}};
        subs.push_back(js);
    }
    root["subsystems"] = subs;
    return root.dump(2) + "\n";
}

void save_problem_json(const ProblemSpec& spec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << problem_to_json(spec);
}

} // namespace dadp
