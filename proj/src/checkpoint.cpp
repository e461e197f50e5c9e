#include "dialcot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dialcot/errors.hpp"
#include "json_reader.hpp"

namespace dialcot {
namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'D', 'C', 'O', 'T', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json config_json(const PPOConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"minibatch_size", c.minibatch_size},
              {"clip_epsilon", c.clip_epsilon},
              {"k", c.k},
              {"r_m", c.r_m},
              {"gamma", c.gamma},
              {"gae_lambda", c.gae_lambda},
              {"update_epochs", c.update_epochs},
              {"value_coef", c.value_coef},
              {"entropy_coef", c.entropy_coef},
              {"max_grad_norm", c.max_grad_norm},
              {"normalize_advantages", c.normalize_advantages},
              {"hidden", c.hidden},
              {"select_decomposer_steps", c.select_decomposer_steps},
              {"seed", c.seed}};
}

PPOConfig config_from_json(const json& j) {
  PPOConfig c;
  detail::JsonReader r(j, "config");
  r.get("learning_rate", c.learning_rate);
  r.get("batch_size", c.batch_size);
  r.get("minibatch_size", c.minibatch_size);
  r.get("clip_epsilon", c.clip_epsilon);
  r.get("k", c.k);
  r.get("r_m", c.r_m);
  r.get("gamma", c.gamma);
  r.get("gae_lambda", c.gae_lambda);
  r.get("update_epochs", c.update_epochs);
  r.get("value_coef", c.value_coef);
  r.get("entropy_coef", c.entropy_coef);
  r.get("max_grad_norm", c.max_grad_norm);
  r.get("normalize_advantages", c.normalize_advantages);
  r.get("hidden", c.hidden);
  r.get("select_decomposer_steps", c.select_decomposer_steps);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

}  // namespace

std::string ppo_config_to_json(const PPOConfig& config) { return config_json(config).dump(); }

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json header;
  header["config"] = config_json(ck.config);
  header["feature_dim"] = ck.feature_dim;
  header["rng_state"] = ck.rng_state;
  header["update_counter"] = ck.update_counter;
  json shapes = json::array();
  ck.net.for_each([&](const auto& t) { shapes.push_back({t.rows(), t.cols()}); });
  header["tensors"] = shapes;
  header["shape"] = {{"k", ck.net.k}, {"d", ck.net.d}, {"hidden", ck.net.hidden}};
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    ck.net.for_each([&](const auto& t) {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string& path, int expected_k, int expected_d) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(kMagic)];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("'" + path + "' is not a checkpoint");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  if (length > (1u << 26)) throw DataError("checkpoint header too large");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("truncated checkpoint header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  ck.config = config_from_json(header.at("config"));
  ck.feature_dim = header.at("feature_dim").get<int>();
  ck.rng_state = header.value("rng_state", std::string{});
  ck.update_counter = header.value("update_counter", 0);

  const int k = header.at("shape").at("k").get<int>();
  const int d = header.at("shape").at("d").get<int>();
  const int hidden = header.at("shape").at("hidden").get<int>();
  if (k != ck.config.k || hidden != ck.config.hidden || d != ck.feature_dim) {
    throw ShapeError("checkpoint tensors (k=" + std::to_string(k) + ", d=" + std::to_string(d) + ", hidden=" +
                     std::to_string(hidden) + ") disagree with its config");
  }
  if ((expected_k >= 0 && expected_k != k) || (expected_d >= 0 && expected_d != d)) {
    throw ShapeError("checkpoint has k=" + std::to_string(k) + ", d=" + std::to_string(d) + " but the run uses k=" +
                     std::to_string(expected_k) + ", d=" + std::to_string(expected_d));
  }
  ck.net = PolicyNetwork<double>::zeros(k, d, hidden);
  const auto& shapes = header.at("tensors");
  std::size_t index = 0;
  ck.net.for_each([&](auto& t) {
    if (index >= shapes.size() || shapes[index][0].get<Eigen::Index>() != t.rows() ||
        shapes[index][1].get<Eigen::Index>() != t.cols()) {
      throw ShapeError("checkpoint tensor " + std::to_string(index) + " has an unexpected shape");
    }
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    ++index;
  });
  if (!in) throw DataError("truncated checkpoint tensors");
  if (!ck.net.all_finite()) throw DataError("checkpoint holds non-finite parameters");
  return ck;
}

}  // namespace dialcot
