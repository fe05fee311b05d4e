#pragma once

#include <complex>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace camu {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

double distance(const Vec3& a, const Vec3& b);

struct Geometry {
    Vec3 bs_position{-50.0, 0.0, 10.0};
    std::vector<Vec3> device_positions;
    int bs_antennas = 15;

    std::size_t devices() const { return device_positions.size(); }
    void validate() const;
};

/// Two-region layout: the first ceil(K/2) devices uniformly in
/// [-10,0]x[-5,5] m, the rest in [10,20]x[-5,5] m, all at ground level.
Geometry two_region_layout(int devices, std::uint64_t seed, int bs_antennas = 15);

enum class Fading { none, rayleigh };

struct ChannelParams {
    double bs_gain_dbi = 5.0;
    double device_gain_dbi = 0.0;
    double carrier_hz = 915e6;
    double pathloss_exp = 3.76;
    double noise_power_w = 1e-4;
    Fading fading = Fading::none;

    void validate() const;
};

inline constexpr double kSpeedOfLight = 299792458.0;

double dbi_to_linear(double dbi);

/// Device-to-BS path loss G_BS * G_D * (c / (4 pi f_c d))^P.
double path_loss(double distance_m, const ChannelParams& params);
/// Device-to-device path loss; both ends use the device antenna gain.
double d2d_path_loss(double distance_m, const ChannelParams& params);

struct ChannelState {
    std::size_t devices = 0;
    std::size_t antennas = 0;
    /// Row k holds the N_a coefficients of h_k.
    std::vector<std::complex<double>> to_bs;
    /// Symmetric K x K, diagonal unused (zero).
    std::vector<std::complex<double>> device_to_device;

    std::span<const std::complex<double>> h(std::size_t k) const {
        return {to_bs.data() + k * antennas, antennas};
    }
    /// ||h_k||^2
    double bs_gain(std::size_t k) const;
    /// |h_jk|^2
    double d2d_gain(std::size_t j, std::size_t k) const {
        return std::norm(device_to_device[j * devices + k]);
    }
};

ChannelState build_channels(const Geometry& geometry, const ChannelParams& params,
                            std::uint64_t seed);

/// power * gain / noise.
double snr(double power_w, double channel_gain, double noise_w);

struct SnrMatrix {
    std::size_t n = 0;
    std::vector<double> gamma;

    double at(std::size_t i, std::size_t j) const { return gamma[i * n + j]; }
};

/// Diagonal: device-to-BS SNR. Off-diagonal: min of the two directional
/// device-to-device SNRs, which keeps the matrix symmetric.
SnrMatrix snr_matrix(const ChannelState& channels, std::span<const double> powers, double noise_w);

void write_channels_csv(std::ostream& out, const ChannelState& channels);

}  // namespace camu
