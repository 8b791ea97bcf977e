# coding: utf-8

# # Bias and explanation metrics on a handful of records

import numpy as np

from biatt_hatexplain import metrics as M

scores = [0.9, 0.8, 0.3, 0.7, 0.2, 0.1]
toxic = [True, True, True, False, False, False]
print("AUROC", M.binary_auroc(scores, toxic))


# Bias AUCs restrict the ranking to posts that mention a community (subgroup), or mix in-group negatives with out-group positives (BPSN) and the reverse (BNSP).

mentions = [True, False, True, True, False, False]
aucs = M.bias_aucs(scores, toxic, mentions)
print(aucs)


# Communities are combined with a power mean at p = -5, which is dominated by the worst community.

print(M.gmb([0.9, 0.9, 0.5]), np.mean([0.9, 0.9, 0.5]))


# Plausibility compares selected tokens to human rationales.

pred = [[1, 1, 0, 0], [0, 0, 0, 0], [0, 1, 0, 1]]
gold = [[1, 0, 0, 0], [0, 0, 0, 0], [0, 1, 1, 1]]
print("IOU F1", M.iou_f1(pred, gold), "Token F1", M.token_f1(pred, gold))
print("AUPRC", M.token_auprc([[0.9, 0.4, 0.1, 0.0], [0.2, 0.2, 0.2, 0.2], [0.1, 0.6, 0.3, 0.5]], gold))


# Faithfulness asks how much the prediction moves when the selection is removed, or kept alone.

def model(keep):
    p = 0.2 + 0.6 * np.atleast_2d(keep)[:, 0].astype(float)
    return np.stack([p, (1 - p) / 2, (1 - p) / 2], axis=1)


print("comprehensiveness", M.comprehensiveness(model, [1, 0, 0]))
print("sufficiency", M.sufficiency(model, [1, 0, 0]))
