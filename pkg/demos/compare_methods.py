"""
Comparing autoencoders and simple baselines
===========================================

Evaluates each method on the test part of the sample dataset with the
same split. Autoencoders are averaged over three seeds.
"""

from dataclasses import replace

from gravityrank.cli import Pipeline, RunConfig, run_eval

base = RunConfig(ks="20,100", runs=3)
pipe = Pipeline(base)
print(f"{len(pipe.queries)} test queries\n")

rows = []
for model in ("gravity_ae", "gravity_vae", "source_target_ae", "standard_ae"):
    cfg = replace(base, model=model)
    pipe.cfg = cfg
    rows.append((model, run_eval(cfg, pipe)[0]))

for name in ("popularity", "popularity_by_country", "in_degree", "knn", "knn_popularity", "svd_dnn"):
    cfg = replace(base, baseline=name)
    pipe.cfg = cfg
    rows.append((name, run_eval(cfg, pipe)[0]))

print(f"{'method':<24}{'Recall@20':>16}{'NDCG@100':>16}")
for name, rep in rows:
    r = f"{rep.mean('recall', 20):.1f} ± {rep.std('recall', 20):.1f}"
    n = f"{rep.mean('ndcg', 100):.1f} ± {rep.std('ndcg', 100):.1f}"
    print(f"{name:<24}{r:>16}{n:>16}")
