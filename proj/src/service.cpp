#include "khm/service.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include "httplib.h"
#include "json.hpp"

#include <stdexcept>

namespace khm {

using nlohmann::json;

namespace {

json tally_json(const std::array<int, 3>& t) {
  return {{"unselected", t[0]}, {"acceptable", t[1]}, {"unacceptable", t[2]}};
}

json values_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send(res, status, {{"error", message}});
}

}  // namespace

LabelSession::LabelSession(Ensemble ensemble, std::filesystem::path output_path, int wave_id)
    : ensemble_(std::move(ensemble)), output_path_(std::move(output_path)), wave_id_(wave_id) {
  working_path_ = output_path_;
  working_path_ += ".working";
  const auto n = ensemble_.outputs.size();
  if (std::filesystem::exists(working_path_)) {
    labels_ = load_classification(working_path_, n);
  } else if (std::filesystem::exists(output_path_)) {
    labels_ = load_classification(output_path_, n);
  } else {
    labels_.labels.assign(static_cast<size_t>(n), 0);
  }
  labels_.wave_id = wave_id_;
}

Classification LabelSession::snapshot() const {
  std::lock_guard lock(mutex_);
  return labels_;
}

std::array<int, 3> LabelSession::set_label(Eigen::Index index, int label) {
  if (label < 0 || label > 2) throw ValidationError("label must be 0, 1 or 2");
  std::lock_guard lock(mutex_);
  if (index < 0 || index >= static_cast<Eigen::Index>(labels_.labels.size())) {
    throw std::out_of_range("no ensemble member " + std::to_string(index));
  }
  labels_.labels[static_cast<size_t>(index)] = label;
  save_classification(labels_, working_path_);
  return labels_.tally();
}

std::filesystem::path LabelSession::save() {
  std::lock_guard lock(mutex_);
  if (output_path_.has_parent_path()) std::filesystem::create_directories(output_path_.parent_path());
  save_classification(labels_, output_path_);
  return std::filesystem::absolute(output_path_);
}

LabelServer::LabelServer(std::shared_ptr<LabelSession> session)
    : session_(std::move(session)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

LabelServer::~LabelServer() { stop(); }

void LabelServer::install_routes() {
  auto& s = *server_;
  auto session = session_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/api/meta", [session](const httplib::Request&, httplib::Response& res) {
    const auto& e = session->ensemble();
    json j;
    j["n"] = e.outputs.size();
    j["length"] = e.outputs.length();
    if (const auto& g = e.outputs.grid()) {
      j["grid_shape"] = {{"rows", g->rows}, {"cols", g->cols}, {"frames", g->frames}};
    } else {
      j["grid_shape"] = nullptr;
    }
    j["wave_id"] = session->wave_id();
    j["parameter_names"] = e.design.names();
    send(res, 200, j);
  });

  s.Get(R"(/api/member/(-?\d+))", [session](const httplib::Request& req, httplib::Response& res) {
    const auto& e = session->ensemble();
    long index = -1;
    try {
      index = std::stol(req.matches[1].str());
    } catch (const std::exception&) {
      return send_error(res, 404, "no ensemble member " + req.matches[1].str());
    }
    if (index < 0 || index >= e.outputs.size()) {
      return send_error(res, 404, "no ensemble member " + std::to_string(index));
    }
    const auto labels = session->snapshot();
    json j;
    j["index"] = index;
    j["values"] = values_json(e.outputs.fields().col(index));
    j["label"] = labels.labels[static_cast<size_t>(index)];
    j["inputs"] = values_json(e.design.raw().row(index).transpose());
    send(res, 200, j);
  });

  s.Get(R"(/api/member/(.*))", [](const httplib::Request& req, httplib::Response& res) {
    send_error(res, 404, "no ensemble member " + req.matches[1].str());
  });

  s.Get("/api/observation", [session](const httplib::Request&, httplib::Response& res) {
    send(res, 200, {{"values", values_json(session->ensemble().observation.z)}});
  });

  s.Post("/api/label", [session](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return send_error(res, 400, "request body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("index") || !body.contains("label")) {
      return send_error(res, 400, "body must be an object with 'index' and 'label'");
    }
    if (!body["index"].is_number_integer() || !body["label"].is_number_integer()) {
      return send_error(res, 400, "'index' and 'label' must be integers");
    }
    const auto index = body["index"].get<long>();
    const auto label = body["label"].get<long>();
    if (label < 0 || label > 2) return send_error(res, 400, "label must be 0, 1 or 2");
    try {
      const auto tally = session->set_label(index, static_cast<int>(label));
      send(res, 200, {{"index", index}, {"label", label}, {"tally", tally_json(tally)}});
    } catch (const std::out_of_range& e) {
      send_error(res, 404, e.what());
    } catch (const Error& e) {
      send_error(res, 500, e.what());
    }
  });

  s.Get("/api/classification", [session](const httplib::Request&, httplib::Response& res) {
    const auto labels = session->snapshot();
    json rows = json::array();
    for (size_t i = 0; i < labels.labels.size(); ++i) {
      rows.push_back({{"run_index", i}, {"label", labels.labels[i]}});
    }
    send(res, 200, {{"labels", rows}, {"tally", tally_json(labels.tally())}, {"wave_id", session->wave_id()}});
  });

  s.Post("/api/save", [session](const httplib::Request&, httplib::Response& res) {
    try {
      send(res, 200, {{"path", session->save().string()}});
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", "not found"}}.dump(), "application/json");
    }
  });
}

int LabelServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = server_->bind_to_any_port(host);
  } else if (!server_->bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void LabelServer::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void LabelServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace khm
