#include "coopbev/ad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");

namespace coopbev::ad {

using nlohmann::json;

void save_checkpoint(const std::string& path, const ParamStore& store, const AdamW* opt,
                     const std::map<std::string, std::string>& meta) {
  json entries = json::array();
  std::vector<const std::vector<double>*> blobs;
  int64_t offset = 0;
  auto push = [&](const std::string& name, const std::string& owner, const Shape& shape,
                  const std::vector<double>& vals) {
    entries.push_back({{"name", name}, {"owner", owner}, {"dtype", "f64"}, {"shape", shape}, {"offset", offset}});
    blobs.push_back(&vals);
    offset += static_cast<int64_t>(vals.size());
  };

  for (const auto& [name, e] : store.entries()) push(name, e.owner, e.tensor->shape, e.tensor->data);

  std::vector<std::vector<double>> scratch;  // keeps step-count scalars alive
  if (opt) {
    scratch.reserve(opt->moments().size());
    for (const auto& [name, st] : opt->moments()) {
      if (st.m.empty()) continue;
      const Shape& shape = store.entry(name).tensor->shape;
      push("opt.m." + name, "opt", shape, st.m);
      push("opt.v." + name, "opt", shape, st.v);
      scratch.push_back({static_cast<double>(st.t)});
      push("opt.t." + name, "opt", Shape{1}, scratch.back());
    }
  }

  json header = {{"format", "coopbev-ckpt"},
                 {"version", 1},
                 {"meta", meta},
                 {"entries", entries},
                 {"blob_elems", offset}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << header.dump() << '\n';
  for (const auto* b : blobs)
    out.write(reinterpret_cast<const char*>(b->data()), static_cast<std::streamsize>(b->size() * sizeof(double)));
  if (!out) throw ConfigError("short write on checkpoint: " + path);
}

LoadReport load_checkpoint(const std::string& path, ParamStore& store, AdamW* opt,
                           const std::function<bool(const std::string&, const std::string&)>& filter,
                           std::map<std::string, std::string>* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw ConfigError("checkpoint missing header: " + path);
  json header = json::parse(header_line);
  if (header.value("format", "") != "coopbev-ckpt") throw ConfigError("not a checkpoint file: " + path);

  const int64_t blob_elems = header.at("blob_elems").get<int64_t>();
  std::vector<double> blob(static_cast<std::size_t>(blob_elems));
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(double)))
    throw ConfigError("truncated checkpoint blob: " + path);

  if (meta_out) {
    for (auto& [k, v] : header.at("meta").items()) (*meta_out)[k] = v.get<std::string>();
  }

  LoadReport rep;
  for (const auto& e : header.at("entries")) {
    const std::string name = e.at("name").get<std::string>();
    const std::string owner = e.at("owner").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    const int64_t off = e.at("offset").get<int64_t>();
    const int64_t n = numel_of(shape);
    if (off < 0 || off + n > blob_elems) throw ConfigError("checkpoint entry out of blob range: " + name);
    const double* src = blob.data() + off;

    if (name.rfind("opt.", 0) == 0) {
      if (!opt || filter) {
        ++rep.skipped;
        continue;
      }
      const std::string kind = name.substr(4, 1);
      const std::string base = name.substr(6);
      if (!store.has(base)) {
        ++rep.skipped;
        continue;
      }
      auto& st = opt->moments()[base];
      if (kind == "m")
        st.m.assign(src, src + n);
      else if (kind == "v")
        st.v.assign(src, src + n);
      else if (kind == "t")
        st.t = static_cast<int64_t>(src[0]);
      else
        throw ConfigError("unknown optimizer entry: " + name);
      ++rep.loaded;
      continue;
    }

    if (!store.has(name) || (filter && !filter(name, owner))) {
      ++rep.skipped;
      continue;
    }
    Tensor& t = *store.get(name);
    if (t.shape != shape)
      throw ConfigError("checkpoint shape mismatch for " + name + ": file " + shape_str(shape) + " vs model " +
                        shape_str(t.shape));
    std::memcpy(t.data.data(), src, static_cast<std::size_t>(n) * sizeof(double));
    ++rep.loaded;
  }
  return rep;
}

}  // namespace coopbev::ad
