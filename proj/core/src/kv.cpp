#include "blocksim/kv.hpp"

#include <algorithm>
#include <stdexcept>

namespace blocksim {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("kv: " + what); }

int pages_for(int tokens) { return (tokens + kPageTokens - 1) / kPageTokens; }

}  // namespace

MigrationPlan plan_migration(int pages, SimTime rec_us_per_page, SimTime cp_us_per_page) {
    if (pages < 0) fail("negative page count");
    if (rec_us_per_page < 0 || cp_us_per_page < 0) fail("negative per-page cost");
    MigrationPlan p;
    p.pages = pages;
    p.rec_us_per_page = rec_us_per_page;
    p.cp_us_per_page = cp_us_per_page;
    if (pages == 0) return p;
    if (rec_us_per_page == 0 && cp_us_per_page == 0) fail("both migration paths disabled");
    if (rec_us_per_page == 0) {
        p.copy_pages = pages;
        p.completion_us = static_cast<SimTime>(pages) * cp_us_per_page;
        return p;
    }
    if (cp_us_per_page == 0) {
        p.recompute_pages = pages;
        p.completion_us = static_cast<SimTime>(pages) * rec_us_per_page;
        return p;
    }
    SimTime r_free = 0, c_free = 0;
    int r = 0, c = 0;
    while (r + c < pages) {
        bool rec_claims;
        if (r_free != c_free) {
            rec_claims = r_free < c_free;
        } else if (rec_us_per_page != cp_us_per_page) {
            rec_claims = rec_us_per_page < cp_us_per_page;
        } else {
            rec_claims = false;  // equal rates: the copy path claims
        }
        if (rec_claims) {
            r_free += rec_us_per_page;
            ++r;
        } else {
            c_free += cp_us_per_page;
            ++c;
        }
    }
    p.recompute_pages = r;
    p.copy_pages = c;
    p.completion_us = std::max(r_free, c_free);
    return p;
}

void order_migrations(std::vector<MigrationCandidate>& candidates) {
    std::sort(candidates.begin(), candidates.end(),
              [](const MigrationCandidate& a, const MigrationCandidate& b) {
                  if (a.shared_pages != b.shared_pages) return a.shared_pages < b.shared_pages;
                  if (a.resume_time != b.resume_time) return a.resume_time < b.resume_time;
                  if (a.request_id != b.request_id) return a.request_id < b.request_id;
                  return a.block_id < b.block_id;
              });
}

void InterceptionTracker::record(const std::string& key, SimTime sample) {
    if (sample < 0) fail("negative interception sample");
    auto& [sum, n] = per_key_[key];
    sum += static_cast<double>(sample);
    ++n;
    global_sum_ += static_cast<double>(sample);
    ++global_n_;
}

std::optional<double> InterceptionTracker::mean(const std::string& key) const {
    auto it = per_key_.find(key);
    if (it == per_key_.end() || it->second.second == 0) return std::nullopt;
    return it->second.first / static_cast<double>(it->second.second);
}

std::optional<double> InterceptionTracker::global_mean() const {
    if (global_n_ == 0) return std::nullopt;
    return global_sum_ / static_cast<double>(global_n_);
}

std::optional<SimTime> InterceptionTracker::predicted_remaining(const std::string& key,
                                                                SimTime t_call,
                                                                SimTime now) const {
    auto m = mean(key);
    if (!m) m = global_mean();
    if (!m) return std::nullopt;
    const double elapsed = static_cast<double>(now - t_call);
    return round_us(std::max(0.0, *m - elapsed));
}

std::uint64_t InterceptionTracker::samples(const std::string& key) const {
    auto it = per_key_.find(key);
    return it == per_key_.end() ? 0 : it->second.second;
}

void KvStore::create_segment(std::uint64_t request, const std::string& block, int device,
                             std::int64_t bytes_per_token) {
    if (bytes_per_token <= 0) fail("bytes_per_token must be positive");
    if (find(request, block)) fail("segment already exists");
    Segment s;
    s.device = device;
    s.bytes_per_page = bytes_per_token * kPageTokens;
    segments_.emplace(std::make_pair(request, block), std::move(s));
}

bool KvStore::has_segment(std::uint64_t request, const std::string& block) const {
    return find(request, block) != nullptr;
}

int KvStore::append_tokens(std::uint64_t request, const std::string& block, int n) {
    if (n < 0) fail("negative token append");
    Segment& s = seg(request, block);
    s.tokens += n;
    const int need = pages_for(s.tokens);
    int added = 0;
    while (static_cast<int>(s.page_ids.size()) < need) {
        ledger_->reserve(s.device, MemoryLedger::Category::kKv, s.bytes_per_page);
        const std::uint64_t id = next_page_++;
        pages_[id] = Page{s.bytes_per_page, 1, s.device};
        s.page_ids.push_back(id);
        ++added;
    }
    return added;
}

int KvStore::share_prefix(std::uint64_t request, std::uint64_t from, const std::string& block,
                          int tokens) {
    Segment& dst = seg(request, block);
    Segment& src = seg(from, block);
    if (!dst.page_ids.empty() || dst.tokens != 0) fail("share_prefix into non-empty segment");
    if (dst.device != src.device) fail("share_prefix across devices");
    if (dst.bytes_per_page != src.bytes_per_page) fail("share_prefix page size mismatch");
    const int full_pages = std::min(tokens, src.tokens) / kPageTokens;
    const int usable = std::min(full_pages, static_cast<int>(src.page_ids.size()));
    for (int i = 0; i < usable; ++i) {
        auto& page = pages_.at(src.page_ids[static_cast<std::size_t>(i)]);
        ++page.ref;
        dst.page_ids.push_back(src.page_ids[static_cast<std::size_t>(i)]);
        saved_by_sharing_ += page.bytes;
    }
    dst.tokens = usable * kPageTokens;
    return dst.tokens;
}

void KvStore::release(std::uint64_t request, const std::string& block) {
    auto it = segments_.find({request, block});
    if (it == segments_.end()) return;
    for (std::uint64_t id : it->second.page_ids) deref(id);
    segments_.erase(it);
}

void KvStore::release_request(std::uint64_t request) {
    auto it = segments_.lower_bound({request, ""});
    while (it != segments_.end() && it->first.first == request) {
        for (std::uint64_t id : it->second.page_ids) deref(id);
        it = segments_.erase(it);
    }
}

void KvStore::move_segment(std::uint64_t request, const std::string& block, int dst_device) {
    Segment& s = seg(request, block);
    if (s.device == dst_device) return;
    for (auto& id : s.page_ids) {
        Page& page = pages_.at(id);
        if (page.ref == 1) {
            ledger_->reserve(dst_device, MemoryLedger::Category::kKv, page.bytes);
            ledger_->release(page.device, MemoryLedger::Category::kKv, page.bytes);
            page.device = dst_device;
        } else {
            // Other readers keep the original; this segment gets a copy.
            --page.ref;
            ledger_->reserve(dst_device, MemoryLedger::Category::kKv, page.bytes);
            const std::uint64_t copy = next_page_++;
            pages_[copy] = Page{page.bytes, 1, dst_device};
            id = copy;
        }
    }
    s.device = dst_device;
}

int KvStore::device_of(std::uint64_t request, const std::string& block) const {
    const Segment* s = find(request, block);
    return s ? s->device : -1;
}

int KvStore::tokens(std::uint64_t request, const std::string& block) const {
    const Segment* s = find(request, block);
    return s ? s->tokens : 0;
}

int KvStore::pages(std::uint64_t request, const std::string& block) const {
    const Segment* s = find(request, block);
    return s ? static_cast<int>(s->page_ids.size()) : 0;
}

int KvStore::shared_pages(std::uint64_t request, const std::string& block) const {
    const Segment* s = find(request, block);
    if (!s) return 0;
    int n = 0;
    for (std::uint64_t id : s->page_ids)
        if (pages_.at(id).ref > 1) ++n;
    return n;
}

std::int64_t KvStore::segment_bytes(std::uint64_t request, const std::string& block) const {
    const Segment* s = find(request, block);
    return s ? static_cast<std::int64_t>(s->page_ids.size()) * s->bytes_per_page : 0;
}

KvStore::Segment& KvStore::seg(std::uint64_t request, const std::string& block) {
    auto it = segments_.find({request, block});
    if (it == segments_.end())
        fail("unknown segment: request " + std::to_string(request) + " block " + block);
    return it->second;
}

const KvStore::Segment* KvStore::find(std::uint64_t request, const std::string& block) const {
    auto it = segments_.find({request, block});
    return it == segments_.end() ? nullptr : &it->second;
}

void KvStore::deref(std::uint64_t page_id) {
    Page& page = pages_.at(page_id);
    if (--page.ref == 0) {
        ledger_->release(page.device, MemoryLedger::Category::kKv, page.bytes);
        pages_.erase(page_id);
    }
}

}  // namespace blocksim
