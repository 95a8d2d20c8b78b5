#include "tore/flopcount/flops.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "tore/itp/pruner.hpp"
#include "tore/mesh/template.hpp"

namespace tore::flopcount {

double Components::total() const {
  return qkv + scores + weighted_sum + out_proj + feed_forward + norms + softmax + projections + elementwise;
}

Components& Components::operator+=(const Components& o) {
  qkv += o.qkv;
  scores += o.scores;
  weighted_sum += o.weighted_sum;
  out_proj += o.out_proj;
  feed_forward += o.feed_forward;
  norms += o.norms;
  softmax += o.softmax;
  projections += o.projections;
  elementwise += o.elementwise;
  return *this;
}

Components Components::operator*(double k) const {
  Components c = *this;
  for (double* v : {&c.qkv, &c.scores, &c.weighted_sum, &c.out_proj, &c.feed_forward, &c.norms, &c.softmax,
                    &c.projections, &c.elementwise})
    *v *= k;
  return c;
}

double attention_flops(double mq, double mk, double d, double ff, double) {
  return 2 * (mq + 2 * mk) * d * d + 2 * mq * mk * d + 2 * mq * mk * d + 2 * mq * d * d + 4 * mq * d * ff;
}

namespace {

// One attention sub-block: projections, scores, softmax, weighted sum, output.
void add_attention(Components& c, double q, double k, double pairs, double d, double heads) {
  c.qkv += 2 * (q + 2 * k) * d * d;
  c.elementwise += (q + 2 * k) * d + q * d;  // projection biases incl. output
  c.scores += 2 * pairs * d;
  c.weighted_sum += 2 * pairs * d;
  c.softmax += 3 * heads * pairs;
  c.out_proj += 2 * q * d * d;
  c.elementwise += q * d;  // residual
}

}  // namespace

Components layer_cost(const LayerSpec& l) {
  if (l.queries == 0 || l.d == 0 || l.ff == 0 || l.heads == 0) throw std::invalid_argument("layer_cost: dims must be positive");
  if (l.kind == LayerSpec::Kind::Decoder && l.memory == 0) throw std::invalid_argument("layer_cost: decoder needs memory");
  const double q = static_cast<double>(l.queries), d = static_cast<double>(l.d), ff = static_cast<double>(l.ff),
               h = static_cast<double>(l.heads);
  const double self_pairs = l.self_pairs ? static_cast<double>(l.self_pairs) : q * q;
  Components c;
  add_attention(c, q, q, self_pairs, d, h);
  if (l.kind == LayerSpec::Kind::Decoder) {
    const double m = static_cast<double>(l.memory);
    add_attention(c, q, m, q * m, d, h);
    c.norms += 15 * q * d;
  } else {
    c.norms += 10 * q * d;
  }
  c.feed_forward += 4 * q * d * ff;
  c.elementwise += q * ff + q * d;  // biases
  c.elementwise += q * ff;          // activation
  c.elementwise += q * d;           // residual
  return c;
}

FlopsReport model_flops(const ArchSpec& arch) {
  FlopsReport r;
  r.name = arch.name;
  for (const auto& b : arch.blocks) {
    BlockReport br{b.name, b.layers, layer_cost(b.layer), {}};
    br.total = br.per_layer * static_cast<double>(b.layers);
    if (b.final_norm) br.total.norms += 5.0 * static_cast<double>(b.layer.queries * b.layer.d);
    r.components += br.total;
    r.blocks.push_back(br);
  }
  for (const auto& l : arch.linears) {
    const double rows = static_cast<double>(l.rows), in = static_cast<double>(l.in), out = static_cast<double>(l.out);
    r.components.projections += 2 * rows * in * out;
    if (l.bias) r.components.elementwise += rows * out;
  }
  r.components.elementwise += arch.elementwise;
  r.excluded = arch.excluded;
  return r;
}

namespace {

constexpr std::size_t kJoints = 14, kVertices = 431, kGrid = 49;
// Average 1-ring degree of the coarse body mesh plus the vertex itself.
constexpr std::size_t kNeighbourhood = 7;

void add_nsr(ArchSpec& a, std::size_t joints) {
  const std::size_t d = 128, ff = 512, heads = 4;
  a.blocks.push_back({"nsr.joints", {LayerSpec::Kind::Encoder, joints, 0, d, ff, heads, 0}, 1, true});
  a.blocks.push_back(
      {"nsr.vertices", {LayerSpec::Kind::Decoder, kVertices, joints, d, ff, heads, kNeighbourhood * kVertices}, 1, true});
  a.linears.push_back({"nsr.to_xyz", kVertices, d, 3, true});
  a.elementwise += 2.0 * kVertices * d;  // query positional add
}

ArchSpec metro(bool gtr) {
  // Global image feature concatenated to every geometry token, three blocks
  // of shrinking width.
  ArchSpec a;
  a.name = gtr ? "metro_gtr" : "metro_full";
  const std::size_t tokens = gtr ? kJoints : kJoints + kVertices;
  std::size_t in = 2048 + 3;
  const std::size_t dims[3] = {1024, 256, 128};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto d = dims[i];
    a.linears.push_back({"block" + std::to_string(i) + ".input", tokens, in, d, true});
    a.blocks.push_back({"block" + std::to_string(i), {LayerSpec::Kind::Encoder, tokens, 0, d, 4 * d, 4, 0}, 4, false});
    in = d;
  }
  a.linears.push_back({"head", tokens, in, 3, true});
  if (gtr) add_nsr(a, kJoints);
  return a;
}

ArchSpec fastmetro(const std::string& name, bool gtr, std::size_t image_tokens, std::size_t layers) {
  // Two encoder-decoder transformers (wide then narrow) with a linear
  // dimension reduction between them. Memory is image tokens plus a camera
  // token; queries are the camera query and the geometry tokens.
  ArchSpec a;
  a.name = name;
  const std::size_t memory = image_tokens + 1;
  const std::size_t queries = 1 + kJoints + (gtr ? 0 : kVertices);
  const std::pair<std::size_t, std::size_t> dims[2] = {{512, 2048}, {128, 512}};
  for (std::size_t i = 0; i < 2; ++i) {
    const auto [d, ff] = dims[i];
    const auto tag = "transformer" + std::to_string(i);
    a.blocks.push_back({tag + ".encoder", {LayerSpec::Kind::Encoder, memory, 0, d, ff, 8, 0}, layers, false});
    a.blocks.push_back({tag + ".decoder", {LayerSpec::Kind::Decoder, queries, memory, d, ff, 8, 0}, layers, false});
  }
  a.linears.push_back({"reduce.memory", memory, 512, 128, true});
  a.linears.push_back({"reduce.queries", queries, 512, 128, true});
  a.linears.push_back({"head", queries, 128, 3, true});
  if (gtr) add_nsr(a, kJoints);
  if (image_tokens < kGrid) {
    // Token pruner on 512-channel 7x7 features: 3x3 conv to 128, cluster
    // assignment and the cluster-token product.
    const double hw = kGrid, c = 512, t = static_cast<double>(image_tokens);
    a.excluded = 2 * hw * (c / 4) * 9 * c + 2 * hw * (c / 4) * t + 2 * t * hw * c;
  }
  return a;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"metro_full",           "metro_gtr",          "fastmetro_full",      "fastmetro_gtr",
          "fastmetro_gtr_itp20",  "fastmetro_gtr_itp50", "fastmetro_small_full", "fastmetro_small_gtr",
          "nsr"};
}

ArchSpec paper_preset(const std::string& name) {
  if (name == "metro_full") return metro(false);
  if (name == "metro_gtr") return metro(true);
  if (name == "fastmetro_full") return fastmetro(name, false, kGrid, 3);
  if (name == "fastmetro_gtr") return fastmetro(name, true, kGrid, 3);
  if (name == "fastmetro_small_full") return fastmetro(name, false, kGrid, 1);
  if (name == "fastmetro_small_gtr") return fastmetro(name, true, kGrid, 1);
  if (name == "nsr") {
    ArchSpec a;
    a.name = name;
    add_nsr(a, kJoints);
    return a;
  }
  const std::string itp = "fastmetro_gtr_itp";
  if (name.rfind(itp, 0) == 0 && name.size() > itp.size()) {
    const auto pct = name.substr(itp.size());
    std::size_t used = 0;
    int p = -1;
    try {
      p = std::stoi(pct, &used);
    } catch (const std::exception&) {
    }
    if (used == pct.size() && p >= 0 && p < 100) {
      return fastmetro(name, true, itp::token_count(kGrid, p / 100.0), 3);
    }
  }
  throw std::invalid_argument("unknown flops preset '" + name + "'");
}

FlopsReport model_flops(const std::string& preset) { return model_flops(paper_preset(preset)); }

ArchSpec describe(const gtr::ModelConfig& cfg) {
  cfg.validate();
  ArchSpec a;
  a.name = "desk";
  const std::size_t J = cfg.joints(), V = cfg.coarse_vertices(), n_img = cfg.image_tokens();
  const std::size_t geometry = J + (cfg.geometry_reduction ? 0 : V);
  const auto& first = cfg.stages.front();
  const std::size_t dl = cfg.stages.back().model_dim;
  a.linears.push_back({"input_proj", n_img, cfg.reduced_dim, first.model_dim, true});
  if (!cfg.geometry_reduction) a.elementwise += static_cast<double>(V * first.model_dim);  // vertex positional add

  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    const auto tag = "stage" + std::to_string(s);
    if (cfg.variant == gtr::Variant::EncoderOnly) {
      const std::size_t seq = n_img + 1 + geometry;
      if (s > 0) a.linears.push_back({tag + ".proj", seq, cfg.stages[s - 1].model_dim, st.model_dim, true});
      a.blocks.push_back({tag + ".encoder", {LayerSpec::Kind::Encoder, seq, 0, st.model_dim, st.ff_dim, st.heads, 0}, st.layers, true});
    } else {
      const std::size_t memory = n_img + 1, queries = 1 + geometry;
      if (s > 0) {
        a.linears.push_back({tag + ".proj", memory, cfg.stages[s - 1].model_dim, st.model_dim, true});
        a.linears.push_back({tag + ".proj_queries", queries, cfg.stages[s - 1].model_dim, st.model_dim, true});
      }
      a.blocks.push_back({tag + ".encoder", {LayerSpec::Kind::Encoder, memory, 0, st.model_dim, st.ff_dim, st.heads, 0}, st.layers, true});
      a.blocks.push_back(
          {tag + ".decoder", {LayerSpec::Kind::Decoder, queries, memory, st.model_dim, st.ff_dim, st.heads, 0}, st.layers, true});
    }
  }
  a.linears.push_back({"joint_head", J, dl, 3, true});
  a.linears.push_back({"camera_head", 1, dl, 3, true});
  a.elementwise += 3.0 * J;  // rest-pose offset

  if (!cfg.geometry_reduction) {
    a.linears.push_back({"vertex_head", V, dl, 3, true});
  } else if (cfg.shape_head == gtr::ShapeHead::Nsr) {
    const auto& n = cfg.nsr;
    if (n.model_dim != dl) a.linears.push_back({"to_shape", J, dl, n.model_dim, true});
    const auto tmpl = mesh::build_template(cfg.template_seed, cfg.template_counts);
    const std::size_t pairs = std::accumulate(tmpl.adjacency.begin(), tmpl.adjacency.end(), std::size_t{0});
    a.blocks.push_back({"nsr.joints", {LayerSpec::Kind::Encoder, J, 0, n.model_dim, n.ff_dim, n.heads, 0}, n.layers, true});
    a.blocks.push_back(
        {"nsr.vertices", {LayerSpec::Kind::Decoder, V, J, n.model_dim, n.ff_dim, n.heads, pairs}, n.layers, true});
    a.linears.push_back({"nsr.to_xyz", V, n.model_dim, 3, true});
    a.elementwise += static_cast<double>(V * n.model_dim);  // query positional add
  } else {
    a.linears.push_back({"mlp.fc1", 1, J * dl, cfg.mlp_hidden, true});
    a.linears.push_back({"mlp.fc2", 1, cfg.mlp_hidden, cfg.mlp_hidden, true});
    a.linears.push_back({"mlp.fc3", 1, cfg.mlp_hidden, V * 3, true});
    a.elementwise += 2.0 * static_cast<double>(cfg.mlp_hidden);  // activations
  }
  a.elementwise += 3.0 * V;  // template offset
  return a;
}

Reduction reduction_report(const FlopsReport& base, const FlopsReport& variant) {
  const double b = base.total(), v = variant.total();
  if (!(b > 0)) throw std::invalid_argument("reduction_report: base total must be positive");
  return {100.0 * (1.0 - v / b), b, v};
}

void write_flops_csv(std::ostream& out, const FlopsReport& r, const FlopsReport* base) {
  const auto& c = r.components;
  const std::pair<const char*, double> rows[] = {
      {"qkv", c.qkv},         {"scores", c.scores},       {"weighted_sum", c.weighted_sum},
      {"out_proj", c.out_proj}, {"feed_forward", c.feed_forward}, {"norms", c.norms},
      {"softmax", c.softmax}, {"projections", c.projections}, {"elementwise", c.elementwise},
  };
  out << "preset,component,flops,reduction_vs_base\n";
  out.precision(12);
  for (const auto& [name, v] : rows) out << r.name << ',' << name << ',' << v << ",\n";
  if (r.excluded > 0) out << r.name << ",pruner_excluded," << r.excluded << ",\n";
  out << r.name << ",total," << r.total() << ',';
  if (base) out << reduction_report(*base, r).percent;
  out << '\n';
}

}  // namespace tore::flopcount
