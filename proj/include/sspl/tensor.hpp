#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "sspl/errors.hpp"

namespace sspl {

namespace detail {
template <class T>
struct Buf {
    std::vector<T> v;
};
} // namespace detail

template <class T>
class Tape;

/// Dense n-dimensional array with optional reverse-mode gradient. Data is
/// shared between copies (value semantics over a shared buffer); the gradient
/// lives in a separate shared slot so every copy of a tensor sees gradients
/// accumulated through any of them.
template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<detail::Buf<T>>();
        t.data_->v.assign(t.numel_(), T(0));
        t.grad_ = std::make_shared<detail::Buf<T>>();
        t.requires_grad_ = requires_grad;
        return t;
    }

    static Tensor full(std::vector<int> shape, T value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.data_->v) x = value;
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (static_cast<int64_t>(values.size()) != t.numel_())
            throw DimError("Tensor::from: value count does not match shape");
        t.data_ = std::make_shared<detail::Buf<T>>();
        t.data_->v = std::move(values);
        t.grad_ = std::make_shared<detail::Buf<T>>();
        t.requires_grad_ = requires_grad;
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }

    int64_t size() const { return defined() ? static_cast<int64_t>(data_->v.size()) : 0; }

    T* data() { return data_->v.data(); }
    const T* data() const { return data_->v.data(); }
    std::vector<T>& vec() { return data_->v; }
    const std::vector<T>& vec() const { return data_->v; }

    T item() const {
        if (size() != 1) throw UsageError("Tensor::item: tensor is not scalar");
        return data_->v[0];
    }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool rq) { requires_grad_ = rq; }

    /// True once a gradient has been accumulated.
    bool has_grad() const { return grad_ && !grad_->v.empty(); }

    /// Gradient buffer, materializing zeros on first access.
    T* grad_data() const {
        if (grad_->v.empty()) grad_->v.assign(numel_(), T(0));
        return grad_->v.data();
    }

    /// Gradient as a vector; zeros if nothing was accumulated.
    std::vector<T> grad() const {
        if (!has_grad()) return std::vector<T>(static_cast<size_t>(numel_()), T(0));
        return grad_->v;
    }

    void zero_grad() const {
        if (grad_) grad_->v.clear();
    }

    /// grad += g (elementwise over the flat buffer).
    void accumulate_grad(const T* g) const {
        T* mine = grad_data();
        const int64_t n = numel_();
        for (int64_t i = 0; i < n; ++i) mine[i] += g[i];
    }

    /// Same data, detached from any recording (no gradient flows through).
    Tensor detach() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = data_;
        t.grad_ = std::make_shared<detail::Buf<T>>();
        t.requires_grad_ = false;
        return t;
    }

    /// Deep copy of the data (gradient not copied).
    Tensor clone() const {
        Tensor t = zeros(shape_, requires_grad_);
        t.data_->v = data_->v;
        return t;
    }

    /// Same buffer under a new shape with identical element count.
    Tensor reshaped(std::vector<int> shape) const {
        Tensor t = *this;
        int64_t n = 1;
        for (int d : shape) n *= d;
        if (n != numel_()) throw DimError("reshape: element count mismatch");
        t.shape_ = std::move(shape);
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t = Tensor<U>::zeros(shape_, false);
        for (int64_t i = 0; i < numel_(); ++i) t.data()[i] = static_cast<U>(data_->v[i]);
        return t;
    }

    bool all_finite() const {
        for (const T& x : data_->v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string r = "[";
        for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
        return r + "]";
    }

private:
    int64_t numel_() const {
        int64_t n = 1;
        for (int d : shape_) n *= d;
        return n;
    }

    std::vector<int> shape_;
    std::shared_ptr<detail::Buf<T>> data_;
    std::shared_ptr<detail::Buf<T>> grad_;
    bool requires_grad_ = false;
};

/// Recording of one training step's operations. Entries are appended in
/// execution order, which is a topological order by construction; the reverse
/// pass walks them back to front. Adjoints accumulate by summation in
/// recording order, keeping runs bit-reproducible.
template <class T>
class Tape {
public:
    static Tape*& current() {
        thread_local Tape* cur = nullptr;
        return cur;
    }

    static bool recording() { return current() != nullptr; }

    void record(std::function<void()> backward_fn) {
        entries_.push_back(std::move(backward_fn));
    }

    size_t size() const { return entries_.size(); }

    void clear() { entries_.clear(); }

    /// Reverse-topological accumulation from a scalar loss. The adjoint of the
    /// loss with respect to itself is 1.
    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
        loss.grad_data()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> entries_;
};

/// Installs a tape as the active recording for the current scope.
template <class T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) { Tape<T>::current() = &tape; }
    ~TapeScope() { Tape<T>::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

/// Suspends recording for the current scope (inference / diagnostics).
template <class T>
class NoGradScope {
public:
    NoGradScope() : prev_(Tape<T>::current()) { Tape<T>::current() = nullptr; }
    ~NoGradScope() { Tape<T>::current() = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* prev_;
};

template <class T>
void backward(const Tensor<T>& loss) {
    Tape<T>* tp = Tape<T>::current();
    if (!tp) throw UsageError("backward: no active tape");
    tp->backward(loss);
}

} // namespace sspl
