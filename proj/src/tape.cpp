#include "emgadapt/tape.hpp"

#include <cmath>
#include <cstring>
#include <memory>

namespace emg::nn {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require_2d(const Tensor& t, const std::string& tag) {
    if (t.rank() != 2)
        throw ShapeError(tag + ": expected 2-D tensor, got " + t.shape_str());
}

} // namespace

Tensor& Tape::grad(NodeId id) {
    nodes_[id].value.ensure_grad();
    return nodes_[id].value;
}

double Tape::value_f64(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.has_scalar64) return n.scalar64;
    return static_cast<double>(n.value.data[0]);
}

Tape::NodeId Tape::push(Node n) {
    check_finite(n);
    nodes_.push_back(std::move(n));
    backward_done_ = false;
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_finite(const Node& n) const {
    if (!n.value.all_finite())
        throw NumericError("non-finite value in '" + n.tag + "'");
}

Tape::NodeId Tape::leaf(Tensor t, bool requires_grad, std::string tag) {
    Node n;
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    n.tag = std::move(tag);
    return push(std::move(n));
}

Tape::NodeId Tape::leaf(const Tensor& t, bool requires_grad, std::string tag, bool copy_grad_flag) {
    Tensor copy = t;
    copy.grad.clear();
    return leaf(std::move(copy), copy_grad_flag ? t.requires_grad : requires_grad, std::move(tag));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b, std::string tag) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    require_2d(A, tag);
    require_2d(B, tag);
    if (A.cols() != B.rows())
        throw ShapeError(tag + ": inner dimensions disagree, " + A.shape_str() + " * " + B.shape_str());
    const int64_t m = A.rows(), kk = A.cols(), nn = B.cols();
    Node node;
    node.value = Tensor({m, nn});
    {
        std::vector<double> acc(static_cast<size_t>(nn));
        for (int64_t i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* arow = &A.data[static_cast<size_t>(i * kk)];
            for (int64_t k = 0; k < kk; ++k) {
                const double av = arow[k];
                const float* brow = &B.data[static_cast<size_t>(k * nn)];
                for (int64_t j = 0; j < nn; ++j) acc[static_cast<size_t>(j)] += av * brow[j];
            }
            float* crow = &node.value.data[static_cast<size_t>(i * nn)];
            for (int64_t j = 0; j < nn; ++j) crow[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
        }
    }
    node.inputs = {a, b};
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [m, kk, nn](Tape& t, Node& self) {
        Node& na = t.nodes_[self.inputs[0]];
        Node& nb = t.nodes_[self.inputs[1]];
        const std::vector<float>& g = self.value.grad;
        if (na.requires_grad) {
            na.value.ensure_grad();
            // dA = G * B^T
            for (int64_t i = 0; i < m; ++i) {
                const float* grow = &g[static_cast<size_t>(i * nn)];
                for (int64_t k = 0; k < kk; ++k) {
                    const float* brow = &nb.value.data[static_cast<size_t>(k * nn)];
                    double acc = 0.0;
                    for (int64_t j = 0; j < nn; ++j) acc += static_cast<double>(grow[j]) * brow[j];
                    na.value.grad[static_cast<size_t>(i * kk + k)] += static_cast<float>(acc);
                }
            }
        }
        if (nb.requires_grad) {
            nb.value.ensure_grad();
            // dB = A^T * G
            std::vector<double> acc(static_cast<size_t>(nn));
            for (int64_t k = 0; k < kk; ++k) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int64_t i = 0; i < m; ++i) {
                    const double av = na.value.data[static_cast<size_t>(i * kk + k)];
                    const float* grow = &g[static_cast<size_t>(i * nn)];
                    for (int64_t j = 0; j < nn; ++j) acc[static_cast<size_t>(j)] += av * grow[j];
                }
                for (int64_t j = 0; j < nn; ++j)
                    nb.value.grad[static_cast<size_t>(k * nn + j)] += static_cast<float>(acc[static_cast<size_t>(j)]);
            }
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::add(NodeId a, NodeId b, std::string tag) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (!A.same_shape(B))
        throw ShapeError(tag + ": shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Node node;
    node.value = A;
    for (size_t i = 0; i < B.data.size(); ++i) node.value.data[i] += B.data[i];
    node.value.grad.clear();
    node.inputs = {a, b};
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    if (nodes_[a].has_scalar64 && nodes_[b].has_scalar64) {
        node.has_scalar64 = true;
        node.scalar64 = nodes_[a].scalar64 + nodes_[b].scalar64;
    }
    node.tag = std::move(tag);
    node.backprop = [](Tape& t, Node& self) {
        for (int which = 0; which < 2; ++which) {
            Node& in = t.nodes_[self.inputs[which]];
            if (!in.requires_grad) continue;
            in.value.ensure_grad();
            for (size_t i = 0; i < self.value.grad.size(); ++i)
                in.value.grad[i] += self.value.grad[i];
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::add_bias(NodeId a, NodeId bias, std::string tag) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[bias].value;
    require_2d(A, tag);
    if (B.rank() != 1 || B.shape[0] != A.cols())
        throw ShapeError(tag + ": bias shape " + B.shape_str() + " does not match trailing dim of " + A.shape_str());
    const int64_t rows = A.rows(), d = A.cols();
    Node node;
    node.value = A;
    node.value.grad.clear();
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < d; ++j)
            node.value.data[static_cast<size_t>(i * d + j)] += B.data[static_cast<size_t>(j)];
    node.inputs = {a, bias};
    node.requires_grad = nodes_[a].requires_grad || nodes_[bias].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [rows, d](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        Node& b = t.nodes_[self.inputs[1]];
        if (in.requires_grad) {
            in.value.ensure_grad();
            for (size_t i = 0; i < self.value.grad.size(); ++i)
                in.value.grad[i] += self.value.grad[i];
        }
        if (b.requires_grad) {
            b.value.ensure_grad();
            for (int64_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < rows; ++i)
                    acc += self.value.grad[static_cast<size_t>(i * d + j)];
                b.value.grad[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::scale(NodeId a, double c, std::string tag) {
    Node node;
    node.value = nodes_[a].value;
    node.value.grad.clear();
    for (float& v : node.value.data) v = static_cast<float>(v * c);
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    if (nodes_[a].has_scalar64) {
        node.has_scalar64 = true;
        node.scalar64 = nodes_[a].scalar64 * c;
    }
    node.tag = std::move(tag);
    node.backprop = [c](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (size_t i = 0; i < self.value.grad.size(); ++i)
            in.value.grad[i] += static_cast<float>(c * self.value.grad[i]);
    };
    return push(std::move(node));
}

Tape::NodeId Tape::hadamard_const(NodeId a, Tensor mask, std::string tag) {
    const Tensor& A = nodes_[a].value;
    if (!A.same_shape(mask))
        throw ShapeError(tag + ": mask shape " + mask.shape_str() + " vs " + A.shape_str());
    Node node;
    node.value = A;
    node.value.grad.clear();
    for (size_t i = 0; i < mask.data.size(); ++i) node.value.data[i] *= mask.data[i];
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [m = std::move(mask)](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (size_t i = 0; i < self.value.grad.size(); ++i)
            in.value.grad[i] += self.value.grad[i] * m.data[i];
    };
    return push(std::move(node));
}

Tape::NodeId Tape::transpose(NodeId a, std::string tag) {
    const Tensor& A = nodes_[a].value;
    require_2d(A, tag);
    const int64_t r = A.rows(), c = A.cols();
    Node node;
    node.value = Tensor({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j)
            node.value.data[static_cast<size_t>(j * r + i)] = A.data[static_cast<size_t>(i * c + j)];
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [r, c](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
                in.value.grad[static_cast<size_t>(i * c + j)] +=
                    self.value.grad[static_cast<size_t>(j * r + i)];
    };
    return push(std::move(node));
}

Tape::NodeId Tape::slice_cols(NodeId a, int64_t c0, int64_t len, std::string tag) {
    const Tensor& A = nodes_[a].value;
    require_2d(A, tag);
    if (c0 < 0 || len < 1 || c0 + len > A.cols())
        throw ShapeError(tag + ": column range out of bounds for " + A.shape_str());
    const int64_t r = A.rows(), c = A.cols();
    Node node;
    node.value = Tensor({r, len});
    for (int64_t i = 0; i < r; ++i)
        std::memcpy(&node.value.data[static_cast<size_t>(i * len)],
                    &A.data[static_cast<size_t>(i * c + c0)], static_cast<size_t>(len) * sizeof(float));
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [r, c, c0, len](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < len; ++j)
                in.value.grad[static_cast<size_t>(i * c + c0 + j)] +=
                    self.value.grad[static_cast<size_t>(i * len + j)];
    };
    return push(std::move(node));
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts, std::string tag) {
    if (parts.empty()) throw ShapeError(tag + ": empty part list");
    const int64_t r = nodes_[parts[0]].value.rows();
    int64_t total = 0;
    bool rg = false;
    for (NodeId p : parts) {
        const Tensor& P = nodes_[p].value;
        require_2d(P, tag);
        if (P.rows() != r) throw ShapeError(tag + ": row count mismatch");
        total += P.cols();
        rg = rg || nodes_[p].requires_grad;
    }
    Node node;
    node.value = Tensor({r, total});
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (NodeId p : parts) {
        const Tensor& P = nodes_[p].value;
        offsets.push_back(off);
        for (int64_t i = 0; i < r; ++i)
            std::memcpy(&node.value.data[static_cast<size_t>(i * total + off)],
                        &P.data[static_cast<size_t>(i * P.cols())],
                        static_cast<size_t>(P.cols()) * sizeof(float));
        off += P.cols();
    }
    node.inputs = parts;
    node.requires_grad = rg;
    node.tag = std::move(tag);
    node.backprop = [r, total, offsets](Tape& t, Node& self) {
        for (size_t pi = 0; pi < self.inputs.size(); ++pi) {
            Node& in = t.nodes_[self.inputs[pi]];
            if (!in.requires_grad) continue;
            in.value.ensure_grad();
            const int64_t w = in.value.cols();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < w; ++j)
                    in.value.grad[static_cast<size_t>(i * w + j)] +=
                        self.value.grad[static_cast<size_t>(i * total + offsets[pi] + j)];
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::gelu(NodeId a, std::string tag) {
    Node node;
    node.value = nodes_[a].value;
    node.value.grad.clear();
    for (float& v : node.value.data) {
        const double x = v;
        v = static_cast<float>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
    }
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (size_t i = 0; i < self.value.grad.size(); ++i) {
            const double x = in.value.data[i];
            const double d = 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                             x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
            in.value.grad[i] += static_cast<float>(d * self.value.grad[i]);
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::softmax_rows(NodeId a, std::string tag) {
    const Tensor& A = nodes_[a].value;
    require_2d(A, tag);
    if (A.cols() < 1) throw ShapeError(tag + ": empty softmax axis");
    const int64_t r = A.rows(), c = A.cols();
    Node node;
    node.value = Tensor({r, c});
    for (int64_t i = 0; i < r; ++i) {
        const float* row = &A.data[static_cast<size_t>(i * c)];
        float m = row[0];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        float* out = &node.value.data[static_cast<size_t>(i * c)];
        for (int64_t j = 0; j < c; ++j) {
            out[j] = std::exp(row[j] - m);
            sum += out[j];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int64_t j = 0; j < c; ++j) out[j] *= inv;
    }
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [r, c](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            const float* y = &self.value.data[static_cast<size_t>(i * c)];
            const float* g = &self.value.grad[static_cast<size_t>(i * c)];
            double dot = 0.0;
            for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(g[j]) * y[j];
            for (int64_t j = 0; j < c; ++j)
                in.value.grad[static_cast<size_t>(i * c + j)] +=
                    static_cast<float>((static_cast<double>(g[j]) - dot) * y[j]);
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps, std::string tag) {
    const Tensor& X = nodes_[x].value;
    const Tensor& G = nodes_[gain].value;
    const Tensor& B = nodes_[bias].value;
    require_2d(X, tag);
    if (eps <= 0) throw ConfigError(tag + ": eps must be positive");
    const int64_t r = X.rows(), d = X.cols();
    if (d < 1) throw ShapeError(tag + ": empty normalization axis");
    if (G.rank() != 1 || G.shape[0] != d || B.rank() != 1 || B.shape[0] != d)
        throw ShapeError(tag + ": gain/bias must be 1-D of size " + std::to_string(d));

    Node node;
    node.value = Tensor({r, d});
    // Save normalized activations and 1/std per row for backward.
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(r * d));
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        const float* row = &X.data[static_cast<size_t>(i * d)];
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double dv = row[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(i)] = static_cast<float>(istd);
        for (int64_t j = 0; j < d; ++j) {
            const float xh = static_cast<float>((row[j] - mean) * istd);
            (*xhat)[static_cast<size_t>(i * d + j)] = xh;
            node.value.data[static_cast<size_t>(i * d + j)] =
                xh * G.data[static_cast<size_t>(j)] + B.data[static_cast<size_t>(j)];
        }
    }
    node.inputs = {x, gain, bias};
    node.requires_grad =
        nodes_[x].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [r, d, xhat, inv_std](Tape& t, Node& self) {
        Node& nx = t.nodes_[self.inputs[0]];
        Node& ng = t.nodes_[self.inputs[1]];
        Node& nb = t.nodes_[self.inputs[2]];
        const std::vector<float>& g = self.value.grad;
        if (ng.requires_grad) {
            ng.value.ensure_grad();
            for (int64_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < r; ++i)
                    acc += static_cast<double>(g[static_cast<size_t>(i * d + j)]) *
                           (*xhat)[static_cast<size_t>(i * d + j)];
                ng.value.grad[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
        if (nb.requires_grad) {
            nb.value.ensure_grad();
            for (int64_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < r; ++i)
                    acc += g[static_cast<size_t>(i * d + j)];
                nb.value.grad[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
        if (nx.requires_grad) {
            nx.value.ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                double mean_dy = 0.0, mean_dyxh = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    const double dy = static_cast<double>(g[static_cast<size_t>(i * d + j)]) *
                                      ng.value.data[static_cast<size_t>(j)];
                    mean_dy += dy;
                    mean_dyxh += dy * (*xhat)[static_cast<size_t>(i * d + j)];
                }
                mean_dy /= static_cast<double>(d);
                mean_dyxh /= static_cast<double>(d);
                const double istd = (*inv_std)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < d; ++j) {
                    const double dy = static_cast<double>(g[static_cast<size_t>(i * d + j)]) *
                                      ng.value.data[static_cast<size_t>(j)];
                    const double xh = (*xhat)[static_cast<size_t>(i * d + j)];
                    nx.value.grad[static_cast<size_t>(i * d + j)] +=
                        static_cast<float>((dy - mean_dy - xh * mean_dyxh) * istd);
                }
            }
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::embed_rows(NodeId table, const std::vector<int>& ids, std::string tag) {
    const Tensor& T = nodes_[table].value;
    require_2d(T, tag);
    const int64_t vocab = T.rows(), d = T.cols();
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw LabelError(tag + ": embedding index " + std::to_string(id) + " outside [0," +
                             std::to_string(vocab) + ")");
    Node node;
    node.value = Tensor({static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(&node.value.data[i * static_cast<size_t>(d)],
                    &T.data[static_cast<size_t>(ids[i]) * static_cast<size_t>(d)],
                    static_cast<size_t>(d) * sizeof(float));
    node.inputs = {table};
    node.requires_grad = nodes_[table].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [ids, d](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < d; ++j)
                in.value.grad[static_cast<size_t>(ids[i]) * static_cast<size_t>(d) +
                              static_cast<size_t>(j)] +=
                    self.value.grad[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
    };
    return push(std::move(node));
}

Tape::NodeId Tape::weighted_sum(NodeId a, Tensor weights, std::string tag) {
    const Tensor& A = nodes_[a].value;
    if (!A.same_shape(weights))
        throw ShapeError(tag + ": weight shape " + weights.shape_str() + " vs " + A.shape_str());
    double total = 0.0;
    for (size_t i = 0; i < A.data.size(); ++i)
        total += static_cast<double>(A.data[i]) * weights.data[i];
    Node node;
    node.value = make_scalar(static_cast<float>(total));
    node.has_scalar64 = true;
    node.scalar64 = total;
    node.inputs = {a};
    node.requires_grad = nodes_[a].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [w = std::move(weights)](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        const float g = self.value.grad[0];
        for (size_t i = 0; i < in.value.data.size(); ++i)
            in.value.grad[i] += g * w.data[i];
    };
    return push(std::move(node));
}

Tape::NodeId Tape::cross_entropy_sum(NodeId logits, const std::vector<int>& labels,
                                     int ignore_index, int64_t* valid_count, std::string tag) {
    const Tensor& L = nodes_[logits].value;
    require_2d(L, tag);
    const int64_t n = L.rows(), k = L.cols();
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError(tag + ": label count " + std::to_string(labels.size()) +
                         " does not match logits rows " + std::to_string(n));
    for (int lab : labels)
        if (lab != ignore_index && (lab < 0 || lab >= k))
            throw LabelError(tag + ": label " + std::to_string(lab) + " outside [0," +
                             std::to_string(k) + ")");
    // Per-row softmax probabilities are saved for backward.
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n * k));
    double total = 0.0;
    int64_t valid = 0;
    for (int64_t i = 0; i < n; ++i) {
        const float* row = &L.data[static_cast<size_t>(i * k)];
        float m = row[0];
        for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - m);
        const double lse = m + std::log(sum);
        for (int64_t j = 0; j < k; ++j)
            (*probs)[static_cast<size_t>(i * k + j)] =
                static_cast<float>(std::exp(static_cast<double>(row[j]) - lse));
        if (labels[static_cast<int64_t>(i)] != ignore_index) {
            total += lse - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
            ++valid;
        }
    }
    if (valid_count) *valid_count = valid;
    Node node;
    node.value = make_scalar(static_cast<float>(total));
    node.has_scalar64 = true;
    node.scalar64 = total;
    node.inputs = {logits};
    node.requires_grad = nodes_[logits].requires_grad;
    node.tag = std::move(tag);
    node.backprop = [labels, ignore_index, n, k, probs](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        const float g = self.value.grad[0];
        for (int64_t i = 0; i < n; ++i) {
            if (labels[static_cast<size_t>(i)] == ignore_index) continue;
            for (int64_t j = 0; j < k; ++j) {
                float p = (*probs)[static_cast<size_t>(i * k + j)];
                if (j == labels[static_cast<size_t>(i)]) p -= 1.0f;
                in.value.grad[static_cast<size_t>(i * k + j)] += g * p;
            }
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::sq_error_sum(NodeId pred, const Tensor& target, const Tensor* include_mask,
                                int64_t* included_count, std::string tag) {
    const Tensor& P = nodes_[pred].value;
    if (!P.same_shape(target))
        throw ShapeError(tag + ": target shape " + target.shape_str() + " vs " + P.shape_str());
    if (include_mask && !P.same_shape(*include_mask))
        throw ShapeError(tag + ": mask shape " + include_mask->shape_str() + " vs " + P.shape_str());
    double total = 0.0;
    int64_t count = 0;
    for (size_t i = 0; i < P.data.size(); ++i) {
        if (include_mask && include_mask->data[i] == 0.0f) continue;
        const double d = static_cast<double>(P.data[i]) - target.data[i];
        total += d * d;
        ++count;
    }
    if (included_count) *included_count = count;
    Node node;
    node.value = make_scalar(static_cast<float>(total));
    node.has_scalar64 = true;
    node.scalar64 = total;
    node.inputs = {pred};
    node.requires_grad = nodes_[pred].requires_grad;
    node.tag = std::move(tag);
    Tensor mask_copy = include_mask ? *include_mask : Tensor();
    const bool has_mask = include_mask != nullptr;
    node.backprop = [tgt = target, mask = std::move(mask_copy), has_mask](Tape& t, Node& self) {
        Node& in = t.nodes_[self.inputs[0]];
        if (!in.requires_grad) return;
        in.value.ensure_grad();
        const float g = self.value.grad[0];
        for (size_t i = 0; i < in.value.data.size(); ++i) {
            if (has_mask && mask.data[i] == 0.0f) continue;
            in.value.grad[i] += g * 2.0f * (in.value.data[i] - tgt.data[i]);
        }
    };
    return push(std::move(node));
}

Tape::NodeId Tape::attention(NodeId q, NodeId k, NodeId v, std::optional<NodeId> mask,
                             std::string tag) {
    const Tensor& Q = nodes_[q].value;
    const Tensor& K = nodes_[k].value;
    const Tensor& V = nodes_[v].value;
    require_2d(Q, tag);
    require_2d(K, tag);
    require_2d(V, tag);
    if (Q.cols() != K.cols())
        throw ShapeError(tag + ": q/k feature dims disagree");
    if (K.rows() != V.rows())
        throw ShapeError(tag + ": k/v row counts disagree");
    if (mask) {
        const Tensor& M = nodes_[*mask].value;
        if (M.rank() != 2 || M.rows() != M.cols())
            throw ShapeError(tag + ": mask must be square, got " + M.shape_str());
        if (M.rows() != Q.rows())
            throw ShapeError(tag + ": mask size does not match sequence length");
    }
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
    NodeId scores = scale(matmul(q, transpose(k, tag + ".kT"), tag + ".qk"), inv_scale, tag + ".scale");
    if (mask) scores = add(scores, *mask, tag + ".mask");
    NodeId attn = softmax_rows(scores, tag + ".softmax");
    return matmul(attn, v, tag + ".av");
}

Tape::NodeId Tape::cross_entropy(NodeId logits, const std::vector<int>& labels, int ignore_index,
                                 std::string tag) {
    int64_t valid = 0;
    NodeId sum = cross_entropy_sum(logits, labels, ignore_index, &valid, tag + ".sum");
    if (valid == 0) {
        // All rows ignored: loss 0 with zero gradient.
        return scale(sum, 0.0, tag + ".mean");
    }
    return scale(sum, 1.0 / static_cast<double>(valid), tag + ".mean");
}

Tape::NodeId Tape::mse(NodeId pred, const Tensor& target, const Tensor* include_mask,
                       std::string tag) {
    int64_t count = 0;
    NodeId sum = sq_error_sum(pred, target, include_mask, &count, tag + ".sum");
    if (count == 0) return scale(sum, 0.0, tag + ".mean");
    return scale(sum, 1.0 / static_cast<double>(count), tag + ".mean");
}

void Tape::backward(NodeId root, double seed) {
    if (backward_done_)
        throw AutodiffError("backward called twice on the same tape without a new forward");
    Node& r = nodes_[root];
    if (r.value.numel() != 1)
        throw AutodiffError("backward root must be a scalar, got " + r.value.shape_str());
    if (!r.requires_grad)
        throw AutodiffError("backward root does not require grad");
    r.value.ensure_grad();
    r.value.grad[0] = static_cast<float>(seed);
    for (NodeId i = root; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backprop) continue;
        if (n.value.grad.empty()) continue; // not reached from the root
        n.backprop(*this, n);
    }
    backward_done_ = true;
}

} // namespace emg::nn
