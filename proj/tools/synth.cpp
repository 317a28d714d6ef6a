// gta_synth: writes a small synthetic dataset (EMB1 features, manifest, bank)
// for trying the CLI without an encoder.
//
// Images of class j are normalize(c_j + noise * g); class prompts are
// normalize(c_j + prompt_noise * g), so prompt_noise controls how often the
// text prior is wrong.

#include "gta/dataset_io.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <random>

int main(int argc, char** argv) {
  CLI::App app{"Synthetic dataset generator"};
  int classes = 4, per_class = 50, dim = 32, fewshot = 0, static_attrs = 2;
  double noise = 0.15, prompt_noise = 0.9;
  std::uint64_t seed = 7;
  std::string out_dir = "synth";
  app.add_option("--classes", classes, "number of classes");
  app.add_option("--per-class", per_class, "images per class");
  app.add_option("--dim", dim, "embedding dimension");
  app.add_option("--noise", noise, "per-coordinate image noise");
  app.add_option("--prompt-noise", prompt_noise, "per-coordinate text noise");
  app.add_option("--static-attrs", static_attrs, "static attributes per class");
  app.add_option("--fewshot", fewshot, "labeled images per class in the manifest");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out_dir, "output directory");
  CLI11_PARSE(app, argc, argv);

  using namespace gta;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto noisy_unit = [&](const Vector& center, double sigma) {
    Vector v = center;
    for (Index d = 0; d < v.size(); ++d) v[d] += sigma * gauss(rng);
    return Vector(v / v.norm());
  };

  Matrix centers(classes, dim);
  for (int j = 0; j < classes; ++j) {
    Vector c(dim);
    for (int d = 0; d < dim; ++d) c[d] = gauss(rng);
    centers.row(j) = (c / c.norm()).transpose();
  }

  DatasetManifest manifest;
  manifest.dataset_name = "synthetic";
  manifest.domain_word = "shapes";
  Matrix features(static_cast<Index>(classes) * per_class, dim);
  for (int j = 0; j < classes; ++j) manifest.classes.push_back("class " + std::to_string(j));
  for (int k = 0; k < per_class; ++k)
    for (int j = 0; j < classes; ++j) {
      const Index row = static_cast<Index>(manifest.images.size());
      features.row(row) = noisy_unit(centers.row(j).transpose(), noise).transpose();
      manifest.images.push_back({"img" + std::to_string(row), j, std::string("test")});
      if (k < fewshot) manifest.fewshot_labels.push_back({manifest.images.back().id, j});
    }

  AttributeBank bank;
  bank.classes = manifest.classes;
  bank.attrs.resize(static_cast<std::size_t>(classes));
  for (int j = 0; j < classes; ++j) {
    const Vector c = centers.row(j).transpose();
    bank.add(j, {"a photo of a " + manifest.classes[j] + ".", noisy_unit(c, prompt_noise), Origin::kPrompt, 0});
    for (int a = 0; a < static_attrs; ++a)
      bank.add(j, {"shapes with trait " + std::to_string(a) + " of " + manifest.classes[j],
                   noisy_unit(c, prompt_noise), Origin::kStatic, 0});
  }

  std::filesystem::create_directories(out_dir);
  write_emb1(out_dir + "/features.emb", features);
  save_manifest(manifest, out_dir + "/manifest.json");
  save_bank(bank, out_dir + "/bank.json");
  std::cout << "wrote " << features.rows() << " images, " << classes << " classes to " << out_dir << "\n";
  return 0;
}
