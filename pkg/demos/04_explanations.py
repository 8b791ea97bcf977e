# coding: utf-8

# # Explaining one prediction three ways

# Attention comes for free. LIME fits a local linear model to random token removals. Exact Shapley values enumerate every subset, so they are only practical for short posts.

import numpy as np

from biatt_hatexplain import explainers as X


# A toy classifier that only reads tokens 1 and 4. Removing a token is the same as setting its mask entry to zero.

def toy(masks):
    m = np.atleast_2d(masks).astype(float)
    p = 0.1 + 0.5 * m[:, 1] + 0.3 * m[:, 4]
    return np.stack([p, 1 - p], axis=1)


lime = X.lime_explain(toy, 6, target=0, n_samples=500, seed=0, k=2)
shap = X.shap_exact(toy, 6, target=0, k=2)
print("LIME", lime.token_scores.round(3), lime.selected.astype(int))
print("SHAP", shap.token_scores.round(3), shap.selected.astype(int))


# Shapley values are efficient: base value plus attributions equals the full-post output.

print(shap.base_value + shap.token_scores.sum(), toy(np.ones(6))[0, 0])


# Posts above the enumeration limit are refused rather than silently truncated.

try:
    X.shap_exact(toy, 21)
except X.ExplanationSizeError as exc:
    print(exc)
