#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace nienie {

// Affective condition labels; the integer values are the on-disk encoding.
enum class Label : std::uint8_t { baseline = 0, stress = 1, amusement = 2 };
inline constexpr int kNumClasses = 3;

// Canonical channel order is [eda, temp, hr] everywhere downstream.
enum class Channel : std::uint8_t { eda = 0, temp = 1, hr = 2 };
inline constexpr int kNumChannels = 3;
inline constexpr std::array<Channel, 3> kChannels = {Channel::eda, Channel::temp, Channel::hr};

// One canonical-rate sample in channel order.
using Sample = std::array<double, kNumChannels>;

std::string_view to_string(Label label);
std::string_view to_string(Channel channel);
std::optional<Label> parse_label(std::string_view text);
std::optional<Label> label_from_int(long long value);
std::optional<Channel> parse_channel(std::string_view text);
std::string_view default_units(Channel channel);

}  // namespace nienie
