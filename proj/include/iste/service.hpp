#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "iste/image.hpp"
#include "iste/model.hpp"

namespace httplib {
class Server;
}

namespace iste {

inline constexpr std::size_t kTileHalo = 8;

/// Fixed set of workers; at most `queue_capacity` jobs wait for a worker.
class WorkerPool {
   public:
    WorkerPool(std::size_t workers, std::size_t queue_capacity);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    /// False when the wait queue is full; the job is then not run.
    bool try_submit(std::function<void()> job);

    std::size_t workers() const { return threads_.size(); }
    std::size_t in_flight() const { return in_flight_; }
    std::size_t max_in_flight() const { return max_in_flight_; }
    std::size_t rejected() const { return rejected_; }

   private:
    void run();

    std::size_t capacity_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> queue_;
    std::vector<std::thread> threads_;
    bool stop_ = false;
    std::atomic<std::size_t> in_flight_{0}, max_in_flight_{0}, rejected_{0};
};

/// Thread-safe LRU map from request keys to encoded PNG bytes.
class TileCache {
   public:
    explicit TileCache(std::size_t capacity) : capacity_(capacity) {}
    std::optional<std::string> get(const std::string& key);
    void put(const std::string& key, std::string value);
    std::size_t size() const;

   private:
    using Entry = std::pair<std::string, std::string>;
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::list<Entry> order_;  // most recent first
    std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

enum class TileMethod { Iste, Bicubic };

/// A tile request after clamping to the image and quantizing the scale.
struct TileGeometry {
    std::size_t x = 0, y = 0, w = 0, h = 0;
    long scale_centi = 100;  // scale * 100
    double scale() const { return static_cast<double>(scale_centi) / 100.0; }
    std::size_t out_w() const { return scaled_extent(w, scale()); }
    std::size_t out_h() const { return scaled_extent(h, scale()); }
};

/// Clamps the region to the image; throws RangeError for an empty region
/// and ConfigError for a scale outside [1, 12].
TileGeometry resolve_tile(std::size_t image_h, std::size_t image_w, long x, long y, long w, long h, double scale);

/// Model output for the region, computed on a crop padded by `halo` LR
/// pixels on every side (where the image allows) and cut back to the region.
Image render_tile(const IsteModel<float>& model, const Image& image, const TileGeometry& g,
                  std::size_t halo = kTileHalo);
Image render_bicubic_tile(const Image& image, const TileGeometry& g);

struct ServiceOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path images;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t workers = 0;  // 0: hardware concurrency
    std::size_t queue_capacity = 32;
    std::size_t cache_capacity = 512;
    std::size_t halo = kTileHalo;
    std::optional<std::string> cors_origin;
    std::optional<std::filesystem::path> static_dir;
};

struct RegisteredImage {
    std::string id;
    Image image;
};

class TileService {
   public:
    explicit TileService(ServiceOptions opt);
    ~TileService();

    /// Reads the checkpoint and the image directory. Until this returns,
    /// every endpoint answers 503.
    void load();
    bool loaded() const { return loaded_; }

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    /// Binds and serves on the calling thread.
    void serve_forever();
    void stop();

    const WorkerPool& pool() const { return pool_; }
    const std::string& model_hash() const { return model_hash_; }
    const std::vector<RegisteredImage>& images() const { return images_; }

   private:
    void install_routes();

    ServiceOptions opt_;
    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
    WorkerPool pool_;
    TileCache cache_;
    std::atomic<bool> loaded_{false};
    std::optional<IsteModel<float>> model_;
    std::string model_hash_;
    std::vector<RegisteredImage> images_;
    std::map<std::string, std::size_t> by_id_;
};

}  // namespace iste
