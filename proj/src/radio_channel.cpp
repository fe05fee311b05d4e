#include "camu/radio_channel.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <stdexcept>

#include "camu/rng.hpp"

namespace camu {

double distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void Geometry::validate() const {
    if (bs_antennas < 1) throw std::invalid_argument("geometry needs at least one BS antenna");
    auto finite = [](const Vec3& v) {
        return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
    };
    if (!finite(bs_position)) throw std::invalid_argument("BS position is not finite");
    for (const auto& p : device_positions)
        if (!finite(p)) throw std::invalid_argument("device position is not finite");
}

Geometry two_region_layout(int devices, std::uint64_t seed, int bs_antennas) {
    if (devices < 1) throw std::invalid_argument("layout needs at least one device");
    Geometry g;
    g.bs_antennas = bs_antennas;
    Rng rng(seed);
    const int first = (devices + 1) / 2;
    for (int k = 0; k < devices; ++k) {
        const double x0 = k < first ? -10.0 : 10.0;
        Vec3 p;
        p.x = rng.uniform(x0, x0 + 10.0);
        p.y = rng.uniform(-5.0, 5.0);
        g.device_positions.push_back(p);
    }
    return g;
}

void ChannelParams::validate() const {
    if (!(carrier_hz > 0.0)) throw std::invalid_argument("carrier frequency must be positive");
    if (!(pathloss_exp >= 0.0)) throw std::invalid_argument("path-loss exponent must be nonnegative");
    if (!(noise_power_w > 0.0)) throw std::invalid_argument("noise power must be positive");
}

double dbi_to_linear(double dbi) { return std::pow(10.0, dbi / 10.0); }

namespace {

double friis(double distance_m, double gain_linear, const ChannelParams& params) {
    if (!(distance_m > 0.0)) throw std::invalid_argument("path loss needs a positive distance");
    const double ratio = kSpeedOfLight / (4.0 * std::numbers::pi * params.carrier_hz * distance_m);
    return gain_linear * std::pow(ratio, params.pathloss_exp);
}

}  // namespace

double path_loss(double distance_m, const ChannelParams& params) {
    return friis(distance_m, dbi_to_linear(params.bs_gain_dbi) * dbi_to_linear(params.device_gain_dbi),
                 params);
}

double d2d_path_loss(double distance_m, const ChannelParams& params) {
    const double g = dbi_to_linear(params.device_gain_dbi);
    return friis(distance_m, g * g, params);
}

double ChannelState::bs_gain(std::size_t k) const {
    double s = 0.0;
    for (const auto& c : h(k)) s += std::norm(c);
    return s;
}

ChannelState build_channels(const Geometry& geometry, const ChannelParams& params,
                            std::uint64_t seed) {
    geometry.validate();
    params.validate();
    const std::size_t K = geometry.devices();
    const auto Na = static_cast<std::size_t>(geometry.bs_antennas);
    ChannelState st;
    st.devices = K;
    st.antennas = Na;
    st.to_bs.resize(K * Na);
    st.device_to_device.assign(K * K, {0.0, 0.0});
    const double wavelength = kSpeedOfLight / params.carrier_hz;

    auto coefficient = [&](double pl, double d, Rng* rng) -> std::complex<double> {
        if (params.fading == Fading::rayleigh) {
            const double s = std::sqrt(pl / 2.0);
            const double re = rng->normal() * s;
            const double im = rng->normal() * s;
            return {re, im};
        }
        return std::polar(std::sqrt(pl), -2.0 * std::numbers::pi * d / wavelength);
    };

    for (std::size_t k = 0; k < K; ++k) {
        const double d = distance(geometry.device_positions[k], geometry.bs_position);
        const double pl = path_loss(d, params);
        Rng rng(derive_seed(seed, {1, k}));
        for (std::size_t a = 0; a < Na; ++a) st.to_bs[k * Na + a] = coefficient(pl, d, &rng);
    }
    for (std::size_t j = 0; j < K; ++j) {
        for (std::size_t k = j + 1; k < K; ++k) {
            const double d = distance(geometry.device_positions[j], geometry.device_positions[k]);
            if (!(d > 0.0))
                throw std::invalid_argument("devices " + std::to_string(j) + " and " +
                                            std::to_string(k) + " share a position");
            Rng rng(derive_seed(seed, {2, j, k}));
            const auto h = coefficient(d2d_path_loss(d, params), d, &rng);
            st.device_to_device[j * K + k] = h;
            st.device_to_device[k * K + j] = h;
        }
    }
    return st;
}

double snr(double power_w, double channel_gain, double noise_w) {
    if (!(noise_w > 0.0)) throw std::invalid_argument("snr needs positive noise power");
    return power_w * channel_gain / noise_w;
}

SnrMatrix snr_matrix(const ChannelState& channels, std::span<const double> powers, double noise_w) {
    const std::size_t K = channels.devices;
    if (powers.size() != K) throw std::invalid_argument("snr_matrix needs one power per device");
    SnrMatrix m;
    m.n = K;
    m.gamma.assign(K * K, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        m.gamma[i * K + i] = snr(powers[i], channels.bs_gain(i), noise_w);
        for (std::size_t j = i + 1; j < K; ++j) {
            const double g = channels.d2d_gain(i, j);
            const double v = std::min(snr(powers[i], g, noise_w), snr(powers[j], g, noise_w));
            m.gamma[i * K + j] = v;
            m.gamma[j * K + i] = v;
        }
    }
    return m;
}

void write_channels_csv(std::ostream& out, const ChannelState& channels) {
    out << "kind,from,to,antenna,re,im,gain\n";
    out << std::setprecision(17);
    for (std::size_t k = 0; k < channels.devices; ++k) {
        for (std::size_t a = 0; a < channels.antennas; ++a) {
            const auto& c = channels.to_bs[k * channels.antennas + a];
            out << "bs," << k << ",bs," << a << ',' << c.real() << ',' << c.imag() << ','
                << std::norm(c) << '\n';
        }
    }
    for (std::size_t j = 0; j < channels.devices; ++j) {
        for (std::size_t k = j + 1; k < channels.devices; ++k) {
            const auto& c = channels.device_to_device[j * channels.devices + k];
            out << "d2d," << j << ',' << k << ",0," << c.real() << ',' << c.imag() << ','
                << std::norm(c) << '\n';
        }
    }
}

}  // namespace camu
