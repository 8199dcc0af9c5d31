#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace picotab {

// Fixed-size worker pool. parallel_for blocks until all indices ran; results
// must be written to caller-owned, index-addressed slots so output is
// independent of completion order.
class ThreadPool {
  public:
    explicit ThreadPool(int n_workers) {
        if (n_workers < 1) n_workers = 1;
        for (int i = 0; i < n_workers; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int size() const { return static_cast<int>(workers_.size()); }

    // Runs fn(i) for i in [0, n). Rethrows the first captured exception.
    void parallel_for(int n, const std::function<void(int)>& fn) {
        if (n <= 0) return;
        if (workers_.size() == 1 || n == 1) {
            for (int i = 0; i < n; ++i) fn(i);
            return;
        }
        std::mutex done_mu;
        std::condition_variable done_cv;
        int remaining = n;
        std::exception_ptr first_error;
        {
            std::lock_guard<std::mutex> lk(mu_);
            for (int i = 0; i < n; ++i) {
                tasks_.push([&, i] {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> dl(done_mu);
                        if (!first_error) first_error = std::current_exception();
                    }
                    {
                        std::lock_guard<std::mutex> dl(done_mu);
                        --remaining;
                    }
                    done_cv.notify_one();
                });
            }
        }
        cv_.notify_all();
        std::unique_lock<std::mutex> dl(done_mu);
        done_cv.wait(dl, [&] { return remaining == 0; });
        if (first_error) std::rethrow_exception(first_error);
    }

  private:
    void worker_loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stopping_ || !tasks_.empty(); });
                if (stopping_ && tasks_.empty()) return;
                task = std::move(tasks_.front());
                tasks_.pop();
            }
            task();
        }
    }

    std::vector<std::thread> workers_;
    std::queue<std::function<void()>> tasks_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stopping_ = false;
};

}  // namespace picotab
