// throwaway timing scratch (not part of the suite)
#include <chrono>
#include <cmath>
#include <cstdio>

#include "eul/data.h"
#include "eul/eval.h"
#include "eul/model.h"
#include "eul/training.h"
#include "eul/unlearn.h"

using namespace eul;

int main() {
  GenConfig gen;
  gen.seed = 1;
  Corpus corpus = generate_corpus(gen);

  BackboneConfig cfg;
  TransformerModel model = TransformerModel::init(cfg, 1);
  TrainConfig tcfg;
  tcfg.seed = 1;
  auto t0 = std::chrono::steady_clock::now();
  train_backbone(model, corpus.train, tcfg);
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("train: %.1fs\n", dt);

  DeletionRequest req{"req1", {"ent03"}};
  CorpusSplit split = resolve_request(corpus, req);
  const double orig_forgot = accuracy(model, split.forget);
  const double orig_ret = accuracy(model, split.retain);
  const double orig_test = accuracy(model, corpus.test);
  const double orig_mlm = mlm_loss_on_forgot(model, split.forget);
  std::printf("original: forgot=%.3f ret=%.3f test=%.3f mlm=%.3f mia=%.3f\n", orig_forgot,
              orig_ret, orig_test, orig_mlm, mia_attack(model, split, 99));

  struct Variant {
    const char* name;
    double lr;
    std::size_t epochs;
    std::size_t batch;
  };
  for (const Variant v : {Variant{"lr5e-2 e3 b16", 5e-2, 3, 16},
                          Variant{"lr0.2 e3 b16", 0.2, 3, 16},
                          Variant{"lr0.5 e3 b16", 0.5, 3, 16},
                          Variant{"lr0.2 e5 b8", 0.2, 5, 8},
                          Variant{"lr0.5 e5 b8", 0.5, 5, 8},
                          Variant{"lr1.0 e5 b8", 1.0, 5, 8}}) {
    UnlearnConfig ucfg;
    ucfg.seed = 1;
    ucfg.learning_rate = v.lr;
    ucfg.epochs = v.epochs;
    ucfg.batch_size = v.batch;
    t0 = std::chrono::steady_clock::now();
    EulResult eul = eul_unlearn(model, split, ucfg);
    dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%-14s %4.1fs forgot=%.3f ret=%.3f test=%.3f mlm=%.3f mia=%.3f\n", v.name,
                dt, accuracy(eul.model, split.forget), accuracy(eul.model, split.retain),
                accuracy(eul.model, corpus.test), mlm_loss_on_forgot(eul.model, split.forget),
                mia_attack(eul.model, split, 99));
  }
  return 0;
}
