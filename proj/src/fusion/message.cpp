#include "coopbev/fusion/message.hpp"

#include <bit>
#include <cstring>

static_assert(std::endian::native == std::endian::little, "wire encoding assumes a little-endian host");

namespace coopbev::fusion {

using namespace ad;

namespace {

constexpr uint32_t kMagic = 0x314D4243;  // "CBM1"

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<uint8_t>& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw ConfigError("truncated message");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

std::vector<uint8_t> encode_message(const Message& m) {
  if (m.payload.size() != static_cast<std::size_t>(m.h) * m.w * m.c)
    throw DimError("message payload does not match its declared extents");
  std::vector<uint8_t> out;
  out.reserve(kMessageHeaderBytes + m.payload.size() * 4);
  put<uint32_t>(out, kMagic);
  put<uint32_t>(out, m.agent_id);
  put<uint8_t>(out, static_cast<uint8_t>(m.modality));
  put<uint8_t>(out, m.rate);
  put<uint16_t>(out, 0);
  put<double>(out, m.pose.x);
  put<double>(out, m.pose.y);
  put<double>(out, m.pose.yaw);
  put<uint32_t>(out, m.h);
  put<uint32_t>(out, m.w);
  put<uint32_t>(out, m.c);
  const auto* p = reinterpret_cast<const uint8_t*>(m.payload.data());
  out.insert(out.end(), p, p + m.payload.size() * 4);
  return out;
}

Message decode_message(const std::vector<uint8_t>& bytes) {
  std::size_t off = 0;
  if (take<uint32_t>(bytes, off) != kMagic) throw ConfigError("bad message magic");
  Message m;
  m.agent_id = take<uint32_t>(bytes, off);
  const uint8_t mod = take<uint8_t>(bytes, off);
  if (mod >= attn::kNumModalities) throw ConfigError("bad message modality");
  m.modality = static_cast<attn::Modality>(mod);
  m.rate = take<uint8_t>(bytes, off);
  take<uint16_t>(bytes, off);
  m.pose.x = take<double>(bytes, off);
  m.pose.y = take<double>(bytes, off);
  m.pose.yaw = take<double>(bytes, off);
  m.h = take<uint32_t>(bytes, off);
  m.w = take<uint32_t>(bytes, off);
  m.c = take<uint32_t>(bytes, off);
  const std::size_t count = static_cast<std::size_t>(m.h) * m.w * m.c;
  if (off + count * 4 != bytes.size()) throw ConfigError("message payload size mismatch");
  m.payload.resize(count);
  std::memcpy(m.payload.data(), bytes.data() + off, count * 4);
  return m;
}

Message make_broadcast(const AgentState& agent, const FusionModel& fm) {
  const int m = static_cast<int>(agent.modality);
  auto packed = conv2d(agent.features, fm.comp_w[m], fm.comp_b[m]);
  Message msg;
  msg.agent_id = agent.id;
  msg.modality = agent.modality;
  msg.pose = agent.pose;
  msg.h = static_cast<uint32_t>(packed->shape[0]);
  msg.w = static_cast<uint32_t>(packed->shape[1]);
  msg.c = static_cast<uint32_t>(packed->shape[2]);
  msg.rate = static_cast<uint8_t>(fm.spec.rate);
  msg.payload.resize(packed->data.size());
  for (std::size_t i = 0; i < packed->data.size(); ++i) msg.payload[i] = static_cast<float>(packed->data[i]);
  return msg;
}

TensorPtr message_features(const Message& m) {
  auto t = Tensor::create({static_cast<int>(m.h), static_cast<int>(m.w), static_cast<int>(m.c)});
  for (std::size_t i = 0; i < m.payload.size(); ++i) t->data[i] = static_cast<double>(m.payload[i]);
  return t;
}

}  // namespace coopbev::fusion
