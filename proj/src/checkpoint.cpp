#include "ctnet/checkpoint.hpp"

#include "ctnet/error.hpp"

#include <json.hpp>

#include <fstream>

namespace ctnet::ctrnn {

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            data.push_back(m(r, c));
        }
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols) {
        throw DataError(std::string("checkpoint matrix '") + name + "' does not match the topology");
    }
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw DataError(std::string("checkpoint matrix '") + name + "' has the wrong number of entries");
    }
    Matrix m(rows, cols);
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = data[i++].get<double>();
        }
    }
    return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& cp) {
    const auto& t = cp.topology;
    json tau = json::array();
    for (Eigen::Index i = 0; i < t.tau.size(); ++i) {
        tau.push_back(t.tau[i]);
    }
    json doc{
        {"format", "ctnet-checkpoint"},
        {"version", kCheckpointVersion},
        {"topology",
         {{"n_in", t.n_in}, {"n_hidden", t.n_hidden}, {"n_out", t.n_out}, {"dt", t.dt}, {"tau", std::move(tau)}}},
        {"seed", cp.seed},
        {"update_count", cp.update_count},
        {"weights",
         {{"w_in", matrix_to_json(cp.weights.w_in)},
          {"w_rec", matrix_to_json(cp.weights.w_rec)},
          {"w_out", matrix_to_json(cp.weights.w_out)},
          {"b_hidden", matrix_to_json(cp.weights.b_hidden)},
          {"b_out", matrix_to_json(cp.weights.b_out)}}},
    };
    out << doc.dump(2) << '\n';
}

Checkpoint read_checkpoint(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != "ctnet-checkpoint") {
            throw DataError("not a ctnet checkpoint");
        }
        const int version = doc.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + std::to_string(version));
        }
        const auto& jt = doc.at("topology");
        Checkpoint cp;
        auto& t = cp.topology;
        t.n_in = jt.at("n_in").get<std::size_t>();
        t.n_hidden = jt.at("n_hidden").get<std::size_t>();
        t.n_out = jt.at("n_out").get<std::size_t>();
        t.dt = jt.at("dt").get<double>();
        const auto tau = jt.at("tau").get<std::vector<double>>();
        t.tau = Eigen::Map<const Vector>(tau.data(), static_cast<Eigen::Index>(tau.size()));
        t.validate();
        cp.seed = doc.at("seed").get<std::uint64_t>();
        cp.update_count = doc.at("update_count").get<std::uint64_t>();
        const auto& jw = doc.at("weights");
        const auto in_ = static_cast<Eigen::Index>(t.n_in);
        const auto hid = static_cast<Eigen::Index>(t.n_hidden);
        const auto out = static_cast<Eigen::Index>(t.n_out);
        cp.weights.w_in = matrix_from_json(jw.at("w_in"), hid, in_, "w_in");
        cp.weights.w_rec = matrix_from_json(jw.at("w_rec"), hid, hid, "w_rec");
        cp.weights.w_out = matrix_from_json(jw.at("w_out"), out, hid, "w_out");
        cp.weights.b_hidden = matrix_from_json(jw.at("b_hidden"), hid, 1, "b_hidden");
        cp.weights.b_out = matrix_from_json(jw.at("b_out"), out, 1, "b_out");
        if (!cp.weights.all_finite()) {
            throw NumericalError("checkpoint contains non-finite weights");
        }
        return cp;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint topology invalid: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    write_checkpoint(out, cp);
    if (!out) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    return read_checkpoint(in);
}

}  // namespace ctnet::ctrnn
