#include "zsl/pipeline.hpp"

#include "zsl/rng.hpp"

namespace zsl {

EmbedDims embed_dims(const Dataset& ds, const PipelineConfig& cfg, TrainMode mode) {
  EmbedDims d;
  d.visual_dim = ds.visual_dim();
  d.proto_dim = ds.proto_dim();
  d.latent_dim = cfg.latent_dim;
  d.semantic_hidden = cfg.semantic_hidden;
  d.classes = ds.seen_classes.size();
  if (mode == TrainMode::kTransductive) d.classes += ds.unseen_classes.size();
  return d;
}

InductiveRun run_inductive(const Dataset& ds, const PipelineConfig& cfg,
                           const EpochCallback& on_epoch) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.mode = TrainMode::kInductive;
  EmbedModel m = init_embed_model(embed_dims(ds, cfg, TrainMode::kInductive), cfg.seed);
  EmbedTrainResult trained = train_inductive(std::move(m), ds, tc, on_epoch);
  InductiveRun run;
  run.report = evaluate_gzsl(trained.model, ds, cfg.distance);
  run.report.metadata.seed = cfg.seed;
  run.model = std::move(trained.model);
  run.history = std::move(trained.history);
  return run;
}

TransductiveRun run_transductive(const Dataset& ds, const PipelineConfig& cfg,
                                 const EpochCallback& on_epoch) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.mode = TrainMode::kTransductive;
  CvaeConfig cc = cfg.cvae;
  cc.seed = cfg.seed;

  TransductiveRun run;
  CvaeModel cvae = init_cvae_model(ds.visual_dim(), ds.proto_dim(), cc.hidden, cfg.seed);
  CvaeTrainResult cvae_trained = train_cvae(std::move(cvae), ds, cc);
  run.cvae = std::move(cvae_trained.model);
  run.cvae_history = std::move(cvae_trained.history);
  run.initial = init_pseudo_labels(ds, run.cvae, cfg.seed, cfg.kmeans_max_iter);
  if (cfg.sample_semantics && !ds.unseen_test.empty()) {
    Rng rng = Rng(cfg.seed).fork("synthesize");
    run.initial.synthesized =
        synthesize_semantic_sampled(run.cvae, gather_rows(ds.visual, ds.unseen_test), rng);
  }

  EmbedModel m = init_embed_model(embed_dims(ds, cfg, TrainMode::kTransductive), cfg.seed);
  TransductiveResult trained = train_transductive(std::move(m), ds, run.initial, tc, on_epoch);
  run.report = evaluate_gzsl(trained.model, ds, cfg.distance);
  run.report.metadata.seed = cfg.seed;
  run.model = std::move(trained.model);
  run.final_state = std::move(trained.state);
  run.history = std::move(trained.history);
  return run;
}

}  // namespace zsl
