"""
What do the learned masses capture?
===================================

Correlates each warm node's learned mass with classical importance
measures of the training graph.
"""

from gravityrank import evaluation, models
from gravityrank.cli import Pipeline, RunConfig

pipe = Pipeline(RunConfig())
model = pipe.train(seed=0)
masses = model.output[:, -1]

measures = evaluation.node_measures(pipe.masked, pipe.meta)
table = evaluation.mass_correlations(masses, measures)
print(table.to_tsv())

# fixing the masses to a known measure removes what the encoder must learn
fixed = pipe.train(seed=0, fixed_mass_source="pagerank")
print("fixed-mass run, final loss:", round(fixed.trace.total[-1], 4),
      "vs learned:", round(model.trace.total[-1], 4))
print("learned mass vs standardized PageRank, Pearson:",
      round(evaluation.mass_correlations(masses, {"pr": models.standardize(measures["pagerank"])})
            .rows["pr"][0], 3))
