#include "rpd/zoo.hpp"

namespace rpd {

namespace {

// Shared stem: one aggressive strided conv brings 224 down to 28 cheaply.
void add_stem(Sequential& net, Rng& rng) {
  net.add<Conv2d>(3, 12, 8, 8, 0, rng);  // 12 x 28 x 28
  net.add<ReLU>();
}

void add_head(Sequential& net, int channels, Rng& rng) {
  net.add<GlobalAvgPool>();
  net.add<Dense>(channels, 2, rng);
}

std::unique_ptr<Sequential> conv_relu(int ic, int oc, int k, int stride, int pad, Rng& rng,
                                      int groups = 1) {
  auto s = std::make_unique<Sequential>();
  s->add<Conv2d>(ic, oc, k, stride, pad, rng, groups);
  s->add<ReLU>();
  return s;
}

std::unique_ptr<Sequential> make_vgg_like(Rng& rng) {
  auto net = std::make_unique<Sequential>();
  add_stem(*net, rng);
  net->add<Conv2d>(12, 16, 3, 1, 1, rng);
  net->add<ReLU>();
  net->add<Conv2d>(16, 16, 3, 2, 1, rng);  // 14
  net->add<ReLU>();
  net->add<Conv2d>(16, 24, 3, 1, 1, rng);
  net->add<ReLU>();
  net->add<Conv2d>(24, 24, 3, 2, 1, rng);  // 7
  net->add<ReLU>();
  add_head(*net, 24, rng);
  return net;
}

std::unique_ptr<Sequential> make_resnet(Rng& rng) {
  auto res_block = [&rng](int ic, int oc, int stride) {
    auto body = std::make_unique<Sequential>();
    body->add<Conv2d>(ic, oc, 3, stride, 1, rng);
    body->add<ReLU>();
    body->add<Conv2d>(oc, oc, 3, 1, 1, rng);
    std::unique_ptr<Layer> shortcut;
    if (ic != oc || stride != 1) {
      auto proj = std::make_unique<Sequential>();
      proj->add<Conv2d>(ic, oc, 1, stride, 0, rng);
      shortcut = std::move(proj);
    }
    return std::make_unique<Residual>(std::move(body), std::move(shortcut));
  };
  auto net = std::make_unique<Sequential>();
  add_stem(*net, rng);
  net->add_layer(res_block(12, 24, 2));  // 24 x 14
  net->add_layer(res_block(24, 24, 1));
  net->add_layer(res_block(24, 40, 2));  // 40 x 7
  net->add_layer(res_block(40, 40, 1));
  add_head(*net, 40, rng);
  return net;
}

std::unique_ptr<Sequential> make_inception_like(Rng& rng) {
  auto inception = [&rng](int ic, int branch_c) {
    auto cat = std::make_unique<ConcatBranches>();
    cat->add_branch()->add_layer(conv_relu(ic, branch_c, 1, 1, 0, rng));
    cat->add_branch()->add_layer(conv_relu(ic, branch_c, 3, 1, 1, rng));
    cat->add_branch()->add_layer(conv_relu(ic, branch_c, 5, 1, 2, rng));
    return cat;
  };
  auto net = std::make_unique<Sequential>();
  add_stem(*net, rng);
  net->add_layer(inception(12, 8));  // 24 x 28
  net->add<Conv2d>(24, 24, 3, 2, 1, rng);
  net->add<ReLU>();                  // 24 x 14
  net->add_layer(inception(24, 8));  // 24 x 14
  net->add<Conv2d>(24, 32, 3, 2, 1, rng);
  net->add<ReLU>();  // 32 x 7
  add_head(*net, 32, rng);
  return net;
}

std::unique_ptr<Sequential> make_mobile(Rng& rng) {
  auto dw_pw = [&rng](Sequential& net, int ic, int oc, int stride) {
    net.add<Conv2d>(ic, ic, 3, stride, 1, rng, /*groups=*/ic);  // depthwise
    net.add<ReLU>();
    net.add<Conv2d>(ic, oc, 1, 1, 0, rng);  // pointwise
    net.add<ReLU>();
  };
  auto net = std::make_unique<Sequential>();
  add_stem(*net, rng);
  dw_pw(*net, 12, 24, 1);  // 24 x 28
  dw_pw(*net, 24, 32, 2);  // 32 x 14
  dw_pw(*net, 32, 32, 1);
  dw_pw(*net, 32, 48, 2);  // 48 x 7
  add_head(*net, 48, rng);
  return net;
}

}  // namespace

std::vector<std::string> backbone_ids() {
  return {"small-resnet", "small-inception-like", "small-mobile", "small-vgg-like"};
}

std::unique_ptr<Sequential> make_backbone(std::string_view backbone_id, Rng& rng) {
  if (backbone_id == "small-resnet") return make_resnet(rng);
  if (backbone_id == "small-inception-like") return make_inception_like(rng);
  if (backbone_id == "small-mobile") return make_mobile(rng);
  if (backbone_id == "small-vgg-like") return make_vgg_like(rng);
  std::string ids;
  for (const auto& id : backbone_ids()) ids += " " + id;
  fail("unknown backbone '" + std::string(backbone_id) + "'; expected one of:" + ids);
}

std::unique_ptr<Sequential> make_embed_trunk(Rng& rng) {
  auto net = std::make_unique<Sequential>();
  net->add<Conv2d>(3, 16, 8, 8, 0, rng);  // 16 x 28 x 28
  net->add<ReLU>();
  net->add<Conv2d>(16, 32, 3, 2, 1, rng);  // 32 x 14 x 14
  net->add<ReLU>();
  net->add<Conv2d>(32, 64, 3, 2, 1, rng);  // 64 x 7 x 7
  net->add<ReLU>();
  net->add<Dense>(64 * 7 * 7, kEmbedDim, rng);
  return net;
}

}  // namespace rpd
