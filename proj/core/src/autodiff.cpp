#include "crossl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace crossl {

void Node::ensure_grad() {
    if (grad.values.empty()) grad = Tensor::zeros(value.shape);
}

void Node::accumulate_grad_from(const Tensor& g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.values.size(); ++i) grad.values[i] += g.values[i];
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    return n;
}

Var leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->ensure_grad();
    return n;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(bw);
    return n;
}

void check_rank(const Var& v, std::size_t r, const char* what) {
    if (v->value.rank() != r) {
        throw shape_error(std::string(what) + ": expected rank " + std::to_string(r) +
                          ", got shape " + shape_to_string(v->value.shape));
    }
}

} // namespace

Var conv1d(const Var& input, const Var& kernel, const Var& bias, std::size_t stride) {
    check_rank(input, 3, "conv1d input");
    check_rank(kernel, 3, "conv1d kernel");
    check_rank(bias, 1, "conv1d bias");
    if (stride < 1) throw shape_error("conv1d: stride must be >= 1");

    const std::size_t n_batch = input->value.shape[0];
    const std::size_t t_in = input->value.shape[1];
    const std::size_t c_in = input->value.shape[2];
    const std::size_t width = kernel->value.shape[0];
    const std::size_t c_out = kernel->value.shape[2];
    if (kernel->value.shape[1] != c_in) {
        throw shape_error("conv1d: kernel expects " + std::to_string(kernel->value.shape[1]) +
                          " input channels, input has " + std::to_string(c_in));
    }
    if (bias->value.shape[0] != c_out) {
        throw shape_error("conv1d: bias length " + std::to_string(bias->value.shape[0]) +
                          " != output channels " + std::to_string(c_out));
    }
    if (t_in < width) {
        throw shape_error("conv1d: window " + std::to_string(t_in) +
                          " shorter than kernel width " + std::to_string(width));
    }

    const std::size_t t_out = (t_in - width) / stride + 1;
    Tensor out = Tensor::zeros({n_batch, t_out, c_out});

    const double* in = input->value.values.data();
    const double* kw = kernel->value.values.data();
    const double* kb = bias->value.values.data();
    double* o = out.values.data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t t = 0; t < t_out; ++t) {
            double* orow = o + (n * t_out + t) * c_out;
            for (std::size_t oc = 0; oc < c_out; ++oc) orow[oc] = kb[oc];
            for (std::size_t w = 0; w < width; ++w) {
                const double* irow = in + (n * t_in + t * stride + w) * c_in;
                const double* krow = kw + w * c_in * c_out;
                for (std::size_t c = 0; c < c_in; ++c) {
                    const double xv = irow[c];
                    const double* kcol = krow + c * c_out;
                    for (std::size_t oc = 0; oc < c_out; ++oc) orow[oc] += xv * kcol[oc];
                }
            }
        }
    }

    return make_op(std::move(out), {input, kernel, bias}, [=](Node& self) {
        const Tensor& g = self.grad;
        Node& xn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& bn = *self.parents[2];
        const double* gp = g.values.data();
        if (bn.requires_grad) {
            bn.ensure_grad();
            double* bg = bn.grad.values.data();
            for (std::size_t n = 0; n < n_batch; ++n)
                for (std::size_t t = 0; t < t_out; ++t) {
                    const double* grow = gp + (n * t_out + t) * c_out;
                    for (std::size_t oc = 0; oc < c_out; ++oc) bg[oc] += grow[oc];
                }
        }
        if (kn.requires_grad) {
            kn.ensure_grad();
            double* kg = kn.grad.values.data();
            const double* in_v = xn.value.values.data();
            for (std::size_t n = 0; n < n_batch; ++n)
                for (std::size_t t = 0; t < t_out; ++t) {
                    const double* grow = gp + (n * t_out + t) * c_out;
                    for (std::size_t w = 0; w < width; ++w) {
                        const double* irow = in_v + (n * t_in + t * stride + w) * c_in;
                        double* krow = kg + w * c_in * c_out;
                        for (std::size_t c = 0; c < c_in; ++c) {
                            const double xv = irow[c];
                            double* kcol = krow + c * c_out;
                            for (std::size_t oc = 0; oc < c_out; ++oc)
                                kcol[oc] += xv * grow[oc];
                        }
                    }
                }
        }
        if (xn.requires_grad) {
            xn.ensure_grad();
            double* xg = xn.grad.values.data();
            const double* kv = kn.value.values.data();
            for (std::size_t n = 0; n < n_batch; ++n)
                for (std::size_t t = 0; t < t_out; ++t) {
                    const double* grow = gp + (n * t_out + t) * c_out;
                    for (std::size_t w = 0; w < width; ++w) {
                        double* irow = xg + (n * t_in + t * stride + w) * c_in;
                        const double* krow = kv + w * c_in * c_out;
                        for (std::size_t c = 0; c < c_in; ++c) {
                            const double* kcol = krow + c * c_out;
                            double acc = 0.0;
                            for (std::size_t oc = 0; oc < c_out; ++oc)
                                acc += kcol[oc] * grow[oc];
                            irow[c] += acc;
                        }
                    }
                }
        }
    });
}

Var dense(const Var& input, const Var& weight, const Var& bias) {
    check_rank(input, 2, "dense input");
    check_rank(weight, 2, "dense weight");
    check_rank(bias, 1, "dense bias");

    const std::size_t n_batch = input->value.shape[0];
    const std::size_t f_in = input->value.shape[1];
    const std::size_t f_out = weight->value.shape[1];
    if (weight->value.shape[0] != f_in) {
        throw shape_error("dense: input features " + std::to_string(f_in) +
                          " != weight rows " + std::to_string(weight->value.shape[0]));
    }
    if (bias->value.shape[0] != f_out) {
        throw shape_error("dense: bias length " + std::to_string(bias->value.shape[0]) +
                          " != weight cols " + std::to_string(f_out));
    }

    Tensor out = Tensor::zeros({n_batch, f_out});
    const double* in = input->value.values.data();
    const double* wv = weight->value.values.data();
    const double* bv = bias->value.values.data();
    double* o = out.values.data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        double* orow = o + n * f_out;
        for (std::size_t j = 0; j < f_out; ++j) orow[j] = bv[j];
        const double* irow = in + n * f_in;
        for (std::size_t i = 0; i < f_in; ++i) {
            const double xv = irow[i];
            const double* wrow = wv + i * f_out;
            for (std::size_t j = 0; j < f_out; ++j) orow[j] += xv * wrow[j];
        }
    }

    return make_op(std::move(out), {input, weight, bias}, [=](Node& self) {
        const double* gp = self.grad.values.data();
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node& bn = *self.parents[2];
        if (bn.requires_grad) {
            bn.ensure_grad();
            double* bg = bn.grad.values.data();
            for (std::size_t n = 0; n < n_batch; ++n) {
                const double* grow = gp + n * f_out;
                for (std::size_t j = 0; j < f_out; ++j) bg[j] += grow[j];
            }
        }
        if (wn.requires_grad) {
            wn.ensure_grad();
            double* wg = wn.grad.values.data();
            const double* in_v = xn.value.values.data();
            for (std::size_t n = 0; n < n_batch; ++n) {
                const double* irow = in_v + n * f_in;
                const double* grow = gp + n * f_out;
                for (std::size_t i = 0; i < f_in; ++i) {
                    const double xv = irow[i];
                    double* wrow = wg + i * f_out;
                    for (std::size_t j = 0; j < f_out; ++j) wrow[j] += xv * grow[j];
                }
            }
        }
        if (xn.requires_grad) {
            xn.ensure_grad();
            double* xg = xn.grad.values.data();
            const double* wv2 = wn.value.values.data();
            for (std::size_t n = 0; n < n_batch; ++n) {
                const double* grow = gp + n * f_out;
                double* irow = xg + n * f_in;
                for (std::size_t i = 0; i < f_in; ++i) {
                    const double* wrow = wv2 + i * f_out;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < f_out; ++j) acc += wrow[j] * grow[j];
                    irow[i] += acc;
                }
            }
        }
    });
}

Var relu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::size_t i = 0; i < self.grad.values.size(); ++i) {
            if (xn.value.values[i] > 0.0) xn.grad.values[i] += self.grad.values[i];
        }
    });
}

Var global_mean_pool(const Var& x) {
    check_rank(x, 3, "global_mean_pool input");
    const std::size_t n_batch = x->value.shape[0];
    const std::size_t t_len = x->value.shape[1];
    const std::size_t c_len = x->value.shape[2];
    if (t_len == 0) throw shape_error("global_mean_pool: empty time axis");

    Tensor out = Tensor::zeros({n_batch, c_len});
    const double* in = x->value.values.data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        double* orow = out.values.data() + n * c_len;
        for (std::size_t t = 0; t < t_len; ++t) {
            const double* irow = in + (n * t_len + t) * c_len;
            for (std::size_t c = 0; c < c_len; ++c) orow[c] += irow[c];
        }
        for (std::size_t c = 0; c < c_len; ++c) orow[c] /= static_cast<double>(t_len);
    }

    return make_op(std::move(out), {x}, [=](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        const double inv_t = 1.0 / static_cast<double>(t_len);
        for (std::size_t n = 0; n < n_batch; ++n) {
            const double* grow = self.grad.values.data() + n * c_len;
            for (std::size_t t = 0; t < t_len; ++t) {
                double* irow = xn.grad.values.data() + (n * t_len + t) * c_len;
                for (std::size_t c = 0; c < c_len; ++c) irow[c] += grow[c] * inv_t;
            }
        }
    });
}

Var concat_features(const std::vector<Var>& xs) {
    if (xs.empty()) throw shape_error("concat_features: no inputs");
    const std::size_t n_batch = xs[0]->value.shape[0];
    std::size_t total = 0;
    for (const auto& x : xs) {
        check_rank(x, 2, "concat_features input");
        if (x->value.shape[0] != n_batch) {
            throw shape_error("concat_features: batch dims differ (" +
                              std::to_string(n_batch) + " vs " +
                              std::to_string(x->value.shape[0]) + ")");
        }
        total += x->value.shape[1];
    }

    Tensor out = Tensor::zeros({n_batch, total});
    std::size_t off = 0;
    for (const auto& x : xs) {
        const std::size_t k = x->value.shape[1];
        for (std::size_t n = 0; n < n_batch; ++n) {
            std::copy_n(x->value.values.data() + n * k, k,
                        out.values.data() + n * total + off);
        }
        off += k;
    }

    return make_op(std::move(out), xs, [=](Node& self) {
        std::size_t o = 0;
        for (auto& p : self.parents) {
            const std::size_t k = p->value.shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t n = 0; n < n_batch; ++n) {
                    const double* grow = self.grad.values.data() + n * total + o;
                    double* prow = p->grad.values.data() + n * k;
                    for (std::size_t j = 0; j < k; ++j) prow[j] += grow[j];
                }
            }
            o += k;
        }
    });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
    if (shape_product(shape) != x->value.size()) {
        throw shape_error("reshape: cannot view " + shape_to_string(x->value.shape) +
                          " as " + shape_to_string(shape));
    }
    Tensor out(std::move(shape), x->value.values);
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::size_t i = 0; i < self.grad.values.size(); ++i)
            xn.grad.values[i] += self.grad.values[i];
    });
}

Var mul_tensor(const Var& x, Tensor factor) {
    if (factor.size() != x->value.size()) {
        throw shape_error("mul_tensor: factor shape " + shape_to_string(factor.shape) +
                          " does not match " + shape_to_string(x->value.shape));
    }
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= factor.values[i];
    auto fac = std::make_shared<Tensor>(std::move(factor));
    return make_op(std::move(out), {x}, [fac](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::size_t i = 0; i < self.grad.values.size(); ++i)
            xn.grad.values[i] += self.grad.values[i] * fac->values[i];
    });
}

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw shape_error("add: shapes " + shape_to_string(a->value.shape) + " vs " +
                          shape_to_string(b->value.shape));
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b->value.values[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) p->accumulate_grad_from(self.grad);
        }
    });
}

Var scale(const Var& x, double factor) {
    Tensor out = x->value;
    for (double& v : out.values) v *= factor;
    return make_op(std::move(out), {x}, [factor](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        for (std::size_t i = 0; i < self.grad.values.size(); ++i)
            xn.grad.values[i] += self.grad.values[i] * factor;
    });
}

Var sum(const Var& x) {
    double total = 0.0;
    for (double v : x->value.values) total += v;
    return make_op(Tensor::scalar(total), {x}, [](Node& self) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        xn.ensure_grad();
        const double g = self.grad.values[0];
        for (double& gi : xn.grad.values) gi += g;
    });
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw shape_error("softmax: expected rank 2, got " + shape_to_string(logits.shape));
    }
    const std::size_t n = logits.shape[0];
    const std::size_t c = logits.shape[1];
    Tensor probs = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.values.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        double* prow = probs.values.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        for (std::size_t j = 0; j < c; ++j) prow[j] /= z;
    }
    return probs;
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    check_rank(logits, 2, "softmax_cross_entropy logits");
    const std::size_t n = logits->value.shape[0];
    const std::size_t c = logits->value.shape[1];
    if (n == 0) throw shape_error("softmax_cross_entropy: empty batch");
    if (labels.size() != n) {
        throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) +
                          " labels for batch of " + std::to_string(n));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= c) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) +
                                    " outside [0, " + std::to_string(c) + ")");
        }
    }

    auto probs = std::make_shared<Tensor>(softmax_rows(logits->value));
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss -= std::log(std::max(probs->values[i * c + labels[i]], 1e-300));
    }
    loss /= static_cast<double>(n);

    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    return make_op(Tensor::scalar(loss), {logits}, [probs, labels_copy, n, c](Node& self) {
        Node& ln = *self.parents[0];
        if (!ln.requires_grad) return;
        ln.ensure_grad();
        const double g = self.grad.values[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* prow = probs->values.data() + i * c;
            double* grow = ln.grad.values.data() + i * c;
            const std::size_t y = static_cast<std::size_t>((*labels_copy)[i]);
            for (std::size_t j = 0; j < c; ++j) {
                grow[j] += g * (prow[j] - (j == y ? 1.0 : 0.0));
            }
        }
    });
}

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: empty graph (no forward recorded)");
    if (root->value.size() != 1) {
        throw shape_error("backward: root must be scalar, got shape " +
                          shape_to_string(root->value.shape));
    }

    // Iterative post-order DFS; order is deterministic (parents vector order).
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.values[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

} // namespace crossl
