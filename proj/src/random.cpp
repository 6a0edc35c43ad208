#include "airq/random.hpp"

namespace airq {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_key(std::uint64_t seed, std::string_view site, std::uint64_t entity,
                         std::int64_t cycle, std::uint64_t extra) noexcept {
  std::uint64_t h = splitmix64(seed ^ fnv1a(site));
  h = splitmix64(h ^ entity);
  h = splitmix64(h ^ static_cast<std::uint64_t>(cycle));
  return splitmix64(h ^ extra);
}

KeyedStream::result_type KeyedStream::operator()() noexcept {
  return splitmix64(key_ + 0x632be59bd9b4e019ULL * ++counter_);
}

double KeyedStream::uniform() noexcept {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double KeyedStream::uniform_open() noexcept {
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace airq
