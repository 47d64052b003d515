#include "w2/io.hpp"

#include <json.hpp>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace w2 {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw IoError(path + ": " + what);
}

const json& need(const json& obj, const std::string& path, const char* key) {
    if (!obj.is_object()) fail(path, "expected object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path, std::string("missing key \"") + key + '"');
    return *it;
}

// null stands in for non-finite reals (JSON has no NaN literal); the value
// surfaces later as an invariant violation, not a parse error.
double as_real(const json& v, const std::string& path) {
    if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
    if (!v.is_number()) fail(path, "expected number");
    return v.get<double>();
}

int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected integer");
    return v.get<int>();
}

std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) fail(path, "expected string");
    return v.get<std::string>();
}

Point2 as_point(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2) fail(path, "expected [x, y]");
    return {as_real(v[0], path + "[0]"), as_real(v[1], path + "[1]")};
}

std::vector<Point2> as_points(const json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "expected array of points");
    std::vector<Point2> out;
    out.reserve(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        std::ostringstream os;
        os << path << "[" << i << "]";
        out.push_back(as_point(v[i], os.str()));
    }
    return out;
}

json point_to_json(const Point2& p) { return json::array({p.x, p.y}); }

json points_to_json(const std::vector<Point2>& pts) {
    json a = json::array();
    for (const Point2& p : pts) a.push_back(point_to_json(p));
    return a;
}

json parse_text(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(what, "parse failure: invalid JSON");
    return j;
}

}  // namespace

// ==== filesystem ============================================================

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open for reading");
    std::ostringstream os;
    os << in.rdbuf();
    if (in.bad()) fail(path, "read failure");
    return os.str();
}

void atomic_write(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp" + std::to_string(static_cast<unsigned>(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(tmp.string(), "cannot open for writing");
        out.write(content.data(),
                  static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            fail(tmp.string(), "write failure");
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        std::error_code ec2;
        fs::remove(tmp, ec2);
        fail(path, "rename failure: " + ec.message());
    }
}

// ==== scene =================================================================

Scene scene_from_json_string(const std::string& text) {
    json j = parse_text(text, "scene");
    Scene s;
    s.id = as_string(need(j, "scene", "id"), "scene.id");

    const json& jg = need(j, "scene", "grid");
    s.grid.height = as_int(need(jg, "scene.grid", "height"), "scene.grid.height");
    s.grid.width = as_int(need(jg, "scene.grid", "width"), "scene.grid.width");
    s.grid.channels =
        as_int(need(jg, "scene.grid", "channels"), "scene.grid.channels");
    const json& jd = need(jg, "scene.grid", "data");
    if (!jd.is_array()) fail("scene.grid.data", "expected array");
    s.grid.data.reserve(jd.size());
    for (size_t i = 0; i < jd.size(); ++i) {
        std::ostringstream os;
        os << "scene.grid.data[" << i << "]";
        s.grid.data.push_back(as_real(jd[i], os.str()));
    }

    const json& jt = need(j, "scene", "text");
    const json& jtok = need(jt, "scene.text", "tokens");
    if (!jtok.is_array() || jtok.empty())
        fail("scene.text.tokens", "expected nonempty array");
    size_t dim = 0;
    for (size_t i = 0; i < jtok.size(); ++i) {
        std::ostringstream os;
        os << "scene.text.tokens[" << i << "]";
        if (!jtok[i].is_array()) fail(os.str(), "expected array");
        if (i == 0) {
            dim = jtok[i].size();
            if (dim == 0) fail(os.str(), "empty token vector");
            s.text.tokens.resize(static_cast<Eigen::Index>(jtok.size()),
                                 static_cast<Eigen::Index>(dim));
        } else if (jtok[i].size() != dim) {
            fail(os.str(), "inconsistent token dimension");
        }
        for (size_t c = 0; c < dim; ++c) {
            std::ostringstream oc;
            oc << os.str() << "[" << c << "]";
            s.text.tokens(static_cast<Eigen::Index>(i),
                          static_cast<Eigen::Index>(c)) =
                as_real(jtok[i][c], oc.str());
        }
    }
    const json& jm = need(jt, "scene.text", "attribute_mask");
    if (!jm.is_array()) fail("scene.text.attribute_mask", "expected array");
    for (size_t i = 0; i < jm.size(); ++i) {
        std::ostringstream os;
        os << "scene.text.attribute_mask[" << i << "]";
        s.text.attribute_mask.push_back(as_int(jm[i], os.str()));
    }
    s.text.cls_index =
        as_int(need(jt, "scene.text", "cls_index"), "scene.text.cls_index");

    s.positives = as_points(need(j, "scene", "positives"), "scene.positives");
    s.negatives = as_points(need(j, "scene", "negatives"), "scene.negatives");

    const std::vector<std::string> violations = validate_scene(s);
    if (!violations.empty()) {
        std::string msg = "scene invariant violation";
        for (const std::string& v : violations) msg += "\n  scene." + v;
        throw IoError(msg);
    }
    return s;
}

std::string scene_to_json_string(const Scene& s) {
    json j;
    j["id"] = s.id;
    j["grid"] = {{"height", s.grid.height},
                 {"width", s.grid.width},
                 {"channels", s.grid.channels},
                 {"data", s.grid.data}};
    json jtok = json::array();
    for (Eigen::Index i = 0; i < s.text.tokens.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < s.text.tokens.cols(); ++c)
            row.push_back(s.text.tokens(i, c));
        jtok.push_back(std::move(row));
    }
    j["text"] = {{"tokens", std::move(jtok)},
                 {"attribute_mask", s.text.attribute_mask},
                 {"cls_index", s.text.cls_index}};
    j["positives"] = points_to_json(s.positives);
    j["negatives"] = points_to_json(s.negatives);
    return j.dump(2) + "\n";
}

Scene load_scene(const std::string& path) {
    try {
        return scene_from_json_string(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

void save_scene(const Scene& scene, const std::string& path) {
    atomic_write(path, scene_to_json_string(scene));
}

// ==== predictions ===========================================================

std::vector<Prediction> predictions_from_json_string(const std::string& text) {
    json j = parse_text(text, "preds");
    if (!j.is_array()) fail("preds", "expected array of predictions");
    std::vector<Prediction> out;
    out.reserve(j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        std::ostringstream os;
        os << "preds[" << i << "]";
        const std::string base = os.str();
        const json& jp = j[i];
        if (!jp.is_object()) fail(base, "expected object");
        Prediction p;
        p.point = as_point(need(jp, base, "point"), base + ".point");
        p.cls_score =
            as_real(need(jp, base, "cls_score"), base + ".cls_score");
        p.attr_score =
            as_real(need(jp, base, "attr_score"), base + ".attr_score");
        if (auto it = jp.find("per_token_scores"); it != jp.end()) {
            if (!it->is_array())
                fail(base + ".per_token_scores", "expected array");
            std::vector<double> scores;
            for (size_t k = 0; k < it->size(); ++k) {
                std::ostringstream ok;
                ok << base << ".per_token_scores[" << k << "]";
                scores.push_back(as_real((*it)[k], ok.str()));
            }
            p.per_token_scores = std::move(scores);
        }
        auto check01 = [&](double v, const char* field) {
            if (!std::isfinite(v)) fail(base + "." + field, "non-finite score");
            if (v < 0.0 || v > 1.0)
                fail(base + "." + field, "score out of range [0,1]");
        };
        check01(p.cls_score, "cls_score");
        check01(p.attr_score, "attr_score");
        if (p.per_token_scores)
            for (double v : *p.per_token_scores) check01(v, "per_token_scores");
        if (!std::isfinite(p.point.x) || !std::isfinite(p.point.y))
            fail(base + ".point", "non-finite coordinate");
        out.push_back(std::move(p));
    }
    return out;
}

std::string predictions_to_json_string(const std::vector<Prediction>& preds) {
    json j = json::array();
    for (const Prediction& p : preds) {
        json jp;
        jp["point"] = point_to_json(p.point);
        jp["cls_score"] = p.cls_score;
        jp["attr_score"] = p.attr_score;
        if (p.per_token_scores) jp["per_token_scores"] = *p.per_token_scores;
        j.push_back(std::move(jp));
    }
    return j.dump(2) + "\n";
}

std::vector<Prediction> load_predictions(const std::string& path) {
    try {
        return predictions_from_json_string(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

void save_predictions(const std::vector<Prediction>& preds,
                      const std::string& path) {
    atomic_write(path, predictions_to_json_string(preds));
}

}  // namespace w2
