#include "iste/service.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iostream>

#include "httplib.h"
#include "iste/checkpoint.hpp"
#include "json.hpp"

namespace iste {

WorkerPool::WorkerPool(std::size_t workers, std::size_t queue_capacity) : capacity_(queue_capacity) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
}

bool WorkerPool::try_submit(std::function<void()> job) {
    {
        std::lock_guard lock(mu_);
        if (queue_.size() >= capacity_) {
            ++rejected_;
            return false;
        }
        queue_.push_back(std::move(job));
    }
    cv_.notify_one();
    return true;
}

void WorkerPool::run() {
    while (true) {
        std::function<void()> job;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
            if (queue_.empty()) return;
            job = std::move(queue_.front());
            queue_.pop_front();
            const std::size_t now = ++in_flight_;
            std::size_t prev = max_in_flight_;
            while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
            }
        }
        job();
        --in_flight_;
    }
}

std::optional<std::string> TileCache::get(const std::string& key) {
    std::lock_guard lock(mu_);
    const auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
}

void TileCache::put(const std::string& key, std::string value) {
    if (capacity_ == 0) return;
    std::lock_guard lock(mu_);
    if (const auto it = index_.find(key); it != index_.end()) {
        order_.erase(it->second);
        index_.erase(it);
    }
    order_.emplace_front(key, std::move(value));
    index_[key] = order_.begin();
    while (order_.size() > capacity_) {
        index_.erase(order_.back().first);
        order_.pop_back();
    }
}

std::size_t TileCache::size() const {
    std::lock_guard lock(mu_);
    return order_.size();
}

TileGeometry resolve_tile(std::size_t image_h, std::size_t image_w, long x, long y, long w, long h, double scale) {
    if (!std::isfinite(scale)) throw ConfigError("scale must be a number");
    const long centi = std::lround(scale * 100.0);
    if (centi < 100 || centi > static_cast<long>(kMaxInferenceScale * 100)) {
        throw ConfigError("scale must lie in [1, 12]");
    }
    if (w <= 0 || h <= 0) throw RangeError("region must have positive width and height");
    const long x0 = std::max(0L, x), y0 = std::max(0L, y);
    const long x1 = std::min(static_cast<long>(image_w), x + w), y1 = std::min(static_cast<long>(image_h), y + h);
    if (x1 <= x0 || y1 <= y0) throw RangeError("region does not intersect the image");
    TileGeometry g;
    g.x = static_cast<std::size_t>(x0);
    g.y = static_cast<std::size_t>(y0);
    g.w = static_cast<std::size_t>(x1 - x0);
    g.h = static_cast<std::size_t>(y1 - y0);
    g.scale_centi = centi;
    return g;
}

Image render_tile(const IsteModel<float>& model, const Image& image, const TileGeometry& g, std::size_t halo) {
    const std::size_t py0 = g.y >= halo ? g.y - halo : 0, px0 = g.x >= halo ? g.x - halo : 0;
    const std::size_t py1 = std::min(image.dim(0), g.y + g.h + halo), px1 = std::min(image.dim(1), g.x + g.w + halo);
    if (py1 - py0 < 8 || px1 - px0 < 8) throw RangeError("tile context smaller than 8x8 pixels");
    const Image padded = crop(image, py0, px0, py1 - py0, px1 - px0);
    return model.predict_region(padded, static_cast<double>(g.y - py0), static_cast<double>(g.x - px0),
                                static_cast<double>(g.h), static_cast<double>(g.w), g.out_h(), g.out_w());
}

Image render_bicubic_tile(const Image& image, const TileGeometry& g) {
    return resample_bicubic(image, static_cast<double>(g.y), static_cast<double>(g.x), static_cast<double>(g.h),
                            static_cast<double>(g.w), g.out_h(), g.out_w());
}

namespace {

using nlohmann::json;

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
}

std::vector<RegisteredImage> scan_images(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("image directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RegisteredImage> out;
    for (const auto& f : files) {
        try {
            out.push_back({f.stem().string(), load_png(f)});
        } catch (const IoError& e) {
            std::cerr << "warning: skipped " << f.filename().string() << ": " << e.what() << "\n";
        }
    }
    return out;
}

}  // namespace

TileService::TileService(ServiceOptions opt)
    : opt_(std::move(opt)),
      server_(std::make_unique<httplib::Server>()),
      pool_(opt_.workers, opt_.queue_capacity),
      cache_(opt_.cache_capacity) {
    // Enough connection threads for every worker and queue slot to fill,
    // so overflow is answered with 503 rather than held by the socket layer.
    const std::size_t conn_threads = pool_.workers() + opt_.queue_capacity + 8;
    server_->new_task_queue = [conn_threads] { return new httplib::ThreadPool(conn_threads); };
    install_routes();
}

TileService::~TileService() { stop(); }

void TileService::load() {
    IsteModel<float> model = IsteModel<float>::load(opt_.checkpoint);
    model_hash_ = nn::hash_hex(nn::file_hash(opt_.checkpoint));
    images_ = scan_images(opt_.images);
    for (std::size_t i = 0; i < images_.size(); ++i) by_id_[images_[i].id] = i;
    model_.emplace(std::move(model));
    loaded_ = true;
}

int TileService::start() {
    const int port = opt_.port == 0 ? server_->bind_to_any_port(opt_.host) : (server_->bind_to_port(opt_.host, opt_.port) ? opt_.port : -1);
    if (port < 0) throw IoError("cannot bind " + opt_.host + ":" + std::to_string(opt_.port));
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void TileService::serve_forever() {
    if (!server_->listen(opt_.host, opt_.port)) {
        throw IoError("cannot listen on " + opt_.host + ":" + std::to_string(opt_.port));
    }
}

void TileService::stop() {
    if (server_) server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
}

void TileService::install_routes() {
    httplib::Server& srv = *server_;

    srv.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
        if (opt_.cors_origin) {
            res.set_header("Access-Control-Allow-Origin", *opt_.cors_origin);
            res.set_header("Access-Control-Expose-Headers", "X-Model-Hash, X-Cache");
        }
    });
    srv.Options(R"(/v1/.*)", [this](const httplib::Request&, httplib::Response& res) {
        if (opt_.cors_origin) res.set_header("Access-Control-Allow-Methods", "GET, OPTIONS");
        res.status = 204;
    });

    srv.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
        if (!loaded_) {
            res.status = 503;
            res.set_content("loading", "text/plain");
            return;
        }
        res.set_content("ok", "text/plain");
    });

    srv.Get("/v1/images", [this](const httplib::Request&, httplib::Response& res) {
        if (!loaded_) return send_error(res, 503, "model is loading");
        json list = json::array();
        for (const auto& img : images_) {
            list.push_back({{"image_id", img.id}, {"width", img.image.dim(1)}, {"height", img.image.dim(0)}});
        }
        res.set_content(list.dump(), "application/json");
    });

    auto tile_handler = [this](bool compare) {
        return [this, compare](const httplib::Request& req, httplib::Response& res) {
            if (!loaded_) return send_error(res, 503, "model is loading");
            TileMethod method = TileMethod::Iste;
            if (compare) {
                const std::string m = req.get_param_value("method");
                if (m == "bicubic") {
                    method = TileMethod::Bicubic;
                } else if (m != "iste") {
                    return send_error(res, 422, "unknown method '" + m + "' (valid: iste, bicubic)");
                }
            }
            const std::string id = req.get_param_value("image_id");
            const auto found = by_id_.find(id);
            if (found == by_id_.end()) return send_error(res, 404, "unknown image_id '" + id + "'");
            const Image& image = images_[found->second].image;

            TileGeometry g;
            try {
                auto num = [&](const char* key) {
                    if (!req.has_param(key)) throw ConfigError(std::string("missing parameter ") + key);
                    std::size_t used = 0;
                    const std::string v = req.get_param_value(key);
                    const double d = std::stod(v, &used);
                    if (used != v.size()) throw ConfigError(std::string("bad value for ") + key);
                    return d;
                };
                auto integer = [&](const char* key) {
                    const double d = num(key);
                    if (d != std::floor(d) || std::abs(d) > 1e9) throw ConfigError(std::string(key) + " must be an integer");
                    return static_cast<long>(d);
                };
                g = resolve_tile(image.dim(0), image.dim(1), integer("x"), integer("y"), integer("w"), integer("h"),
                                 num("scale"));
            } catch (const std::exception& e) {
                return send_error(res, 422, e.what());
            }

            char key[160];
            std::snprintf(key, sizeof(key), "%s|%zu|%zu|%zu|%zu|%ld|%d", id.c_str(), g.x, g.y, g.w, g.h,
                          g.scale_centi, static_cast<int>(method));
            res.set_header("X-Model-Hash", model_hash_);
            if (auto hit = cache_.get(key)) {
                res.set_header("X-Cache", "hit");
                res.set_content(std::move(*hit), "image/png");
                return;
            }
            auto task = std::make_shared<std::packaged_task<std::string()>>([this, &image, g, method] {
                const Image out =
                    method == TileMethod::Iste ? render_tile(*model_, image, g, opt_.halo) : render_bicubic_tile(image, g);
                return encode_png(out);
            });
            std::future<std::string> result = task->get_future();
            if (!pool_.try_submit([task] { (*task)(); })) {
                return send_error(res, 503, "inference queue full");
            }
            try {
                std::string png = result.get();
                cache_.put(key, png);
                res.set_header("X-Cache", "miss");
                res.set_content(std::move(png), "image/png");
            } catch (const std::invalid_argument& e) {
                send_error(res, 422, e.what());
            } catch (const std::out_of_range& e) {
                send_error(res, 422, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        };
    };
    srv.Get("/v1/tile", tile_handler(false));
    srv.Get("/v1/compare", tile_handler(true));

    if (opt_.static_dir) srv.set_mount_point("/", opt_.static_dir->string());
}

}  // namespace iste
