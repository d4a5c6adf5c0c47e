#include "hiergen/metrics.hpp"

#include <cmath>
#include <fstream>

#include "hiergen/container.hpp"
#include "hiergen/rng.hpp"
#include "hiergen/synth.hpp"

namespace hiergen {

double pearson(const real* a, const real* b, int64_t n, bool* degenerate) {
    double ma = 0, mb = 0;
    for (int64_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double saa = 0, sbb = 0, sab = 0;
    for (int64_t i = 0; i < n; ++i) {
        double da = a[i] - ma;
        double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0 || sbb <= 0) {
        if (degenerate) *degenerate = true;
        return 0;
    }
    return sab / std::sqrt(saa * sbb);
}

double pixcorr(const tptr& a, const tptr& b, bool* degenerate) {
    require_same_shape(*a, *b, "pixcorr");
    return pearson(a->v.data(), b->v.data(), a->numel(), degenerate);
}

namespace {

constexpr int k_ssim_win = 7;

const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> g(k_ssim_win * k_ssim_win);
        const double sigma = 1.5;
        double sum = 0;
        for (int i = 0; i < k_ssim_win; ++i)
            for (int j = 0; j < k_ssim_win; ++j) {
                double di = i - k_ssim_win / 2;
                double dj = j - k_ssim_win / 2;
                g[i * k_ssim_win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
                sum += g[i * k_ssim_win + j];
            }
        for (auto& x : g) x /= sum;
        return g;
    }();
    return w;
}

// channel-mean grayscale of an [h,w,3] or [h,w] image
std::vector<double> to_gray(const tptr& img, int& h, int& w) {
    if (img->rank() == 3 && img->dim(2) == 3) {
        h = img->dim(0);
        w = img->dim(1);
        std::vector<double> g(size_t(h) * w);
        for (int i = 0; i < h * w; ++i)
            g[i] = (double(img->v[3 * i]) + double(img->v[3 * i + 1]) +
                    double(img->v[3 * i + 2])) /
                   3.0;
        return g;
    }
    if (img->rank() == 2) {
        h = img->dim(0);
        w = img->dim(1);
        return std::vector<double>(img->v.begin(), img->v.end());
    }
    throw config_error("ssim: expected an [h,w,3] or [h,w] image");
}

} // namespace

double ssim(const tptr& a, const tptr& b) {
    require_same_shape(*a, *b, "ssim");
    int h = 0, w = 0;
    auto ga = to_gray(a, h, w);
    auto gb = to_gray(b, h, w);
    if (h < k_ssim_win || w < k_ssim_win)
        throw config_error("ssim: image smaller than the 7x7 window");
    const auto& win = ssim_window();
    const double C1 = 0.01 * 0.01;
    const double C2 = 0.03 * 0.03;
    double total = 0;
    int64_t windows = 0;
    for (int i = 0; i + k_ssim_win <= h; ++i) {
        for (int j = 0; j + k_ssim_win <= w; ++j) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int u = 0; u < k_ssim_win; ++u)
                for (int v = 0; v < k_ssim_win; ++v) {
                    double ww = win[u * k_ssim_win + v];
                    double x = ga[(i + u) * w + (j + v)];
                    double y = gb[(i + u) * w + (j + v)];
                    mx += ww * x;
                    my += ww * y;
                    sxx += ww * x * x;
                    syy += ww * y * y;
                    sxy += ww * x * y;
                }
            double vx = sxx - mx * mx;
            double vy = syy - my * my;
            double cxy = sxy - mx * my;
            total += ((2 * mx * my + C1) * (2 * cxy + C2)) /
                     ((mx * mx + my * my + C1) * (vx + vy + C2));
            ++windows;
        }
    }
    return total / double(windows);
}

double two_way_from_sim(const std::vector<double>& sim, int n, int trials, uint64_t seed) {
    if (n < 2) throw config_error("two_way: needs at least 2 samples");
    if (static_cast<int64_t>(sim.size()) != int64_t(n) * n)
        throw dim_error("two_way: similarity matrix extent");
    if (trials < 1) throw config_error("two_way: trials must be >= 1");
    rng r(seed);
    double score = 0;
    int64_t comparisons = 0;
    for (int t = 0; t < trials; ++t) {
        for (int i = 0; i < n; ++i) {
            int j = static_cast<int>(r.uniform_int(n - 1));
            if (j >= i) ++j;  // uniform over the n-1 distractors
            double own = sim[int64_t(i) * n + i];
            double other = sim[int64_t(i) * n + j];
            if (own > other)
                score += 1;
            else if (own == other)
                score += 0.5;
            ++comparisons;
        }
    }
    return score / double(comparisons);
}

double two_way_identification(const tptr& true_embeds, const tptr& recon_embeds, int trials,
                              uint64_t seed) {
    require_same_shape(*true_embeds, *recon_embeds, "two_way");
    const int n = true_embeds->dim(0);
    const int d = true_embeds->dim(1);
    if (n < 2) throw config_error("two_way: needs at least 2 samples");
    std::vector<double> sim(size_t(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            sim[size_t(i) * n + j] = pearson(true_embeds->v.data() + int64_t(i) * d,
                                             recon_embeds->v.data() + int64_t(j) * d, d);
    return two_way_from_sim(sim, n, trials, seed);
}

double correlation_distance(const tptr& a, const tptr& b, int* warnings) {
    require_same_shape(*a, *b, "correlation_distance");
    const int n = a->dim(0);
    const int d = a->dim(1);
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        bool degenerate = false;
        double rho = pearson(a->v.data() + int64_t(i) * d, b->v.data() + int64_t(i) * d, d,
                             &degenerate);
        if (degenerate) {
            sum += 1;  // distance 1 when correlation is undefined
            if (warnings) ++(*warnings);
        } else {
            sum += 1 - rho;
        }
    }
    return sum / double(n);
}

eval_report evaluate_suite(const std::vector<tptr>& truth, const std::vector<tptr>& recon,
                           const teacher_model& teacher, int trials, uint64_t seed) {
    if (truth.size() != recon.size())
        throw data_error("evaluate_suite: sample counts differ");
    if (truth.size() < 2) throw data_error("evaluate_suite: needs at least 2 samples");
    eval_report r;
    r.count = static_cast<int>(truth.size());
    r.seed = seed;
    const int n = r.count;
    auto true_emb = make_tensor({n, k_embed_dim});
    auto recon_emb = make_tensor({n, k_embed_dim});
    double pix_sum = 0, ssim_sum = 0;
    for (int i = 0; i < n; ++i) {
        bool degenerate = false;
        double pc = pixcorr(truth[i], recon[i], &degenerate);
        if (degenerate) ++r.warnings;
        double ss = ssim(truth[i], recon[i]);
        pix_sum += pc;
        ssim_sum += ss;
        r.pixcorr_per.push_back(static_cast<real>(pc));
        r.ssim_per.push_back(static_cast<real>(ss));
        auto et = teacher_vision(teacher, truth[i]).embed;
        auto er = teacher_vision(teacher, recon[i]).embed;
        for (int j = 0; j < k_embed_dim; ++j) {
            true_emb->v[int64_t(i) * k_embed_dim + j] = et->v[j];
            recon_emb->v[int64_t(i) * k_embed_dim + j] = er->v[j];
        }
    }
    r.pixcorr_mean = pix_sum / n;
    r.ssim_mean = ssim_sum / n;
    r.two_way = two_way_identification(true_emb, recon_emb, trials, seed);
    for (int i = 0; i < n; ++i) {
        bool degenerate = false;
        double rho = pearson(true_emb->v.data() + int64_t(i) * k_embed_dim,
                             recon_emb->v.data() + int64_t(i) * k_embed_dim, k_embed_dim,
                             &degenerate);
        double dist = degenerate ? 1 : 1 - rho;
        if (degenerate) ++r.warnings;
        r.corr_distance_per.push_back(static_cast<real>(dist));
        r.corr_distance += dist;
    }
    r.corr_distance /= n;
    return r;
}

void write_eval_report(const std::string& text_path, const std::string& sidecar_path,
                       const eval_report& r, const std::vector<std::string>& metadata) {
    std::ofstream out(text_path);
    if (!out) throw data_error("cannot write report to " + text_path);
    out << "count=" << r.count << "\n";
    out << "pixcorr=" << r.pixcorr_mean << "\n";
    out << "ssim=" << r.ssim_mean << "\n";
    out << "two_way=" << r.two_way << "\n";
    out << "corr_distance=" << r.corr_distance << "\n";
    out << "warnings=" << r.warnings << "\n";
    out << "trials_seed=" << r.seed << "\n";
    for (const auto& m : metadata) out << m << "\n";
    out.close();

    container c;
    c.add_f32("pixcorr", {r.count}, r.pixcorr_per);
    c.add_f32("ssim", {r.count}, r.ssim_per);
    c.add_f32("corr_distance", {r.count}, r.corr_distance_per);
    c.add_f32("summary",
              {4},
              {static_cast<real>(r.pixcorr_mean), static_cast<real>(r.ssim_mean),
               static_cast<real>(r.two_way), static_cast<real>(r.corr_distance)});
    save_container(sidecar_path, c);
}

} // namespace hiergen
