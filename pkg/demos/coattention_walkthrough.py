"""What co-attention does to a pair of feature maps.

Two maps of the same class share structure.  The channel weight matrix
scores each channel of the first map against every channel of the second,
negates the scores and takes a row softmax, so each output channel becomes a
blend that leans on the channels that are *least* alike.  Here we build a
pair by hand, print the weights and check the properties the training code
relies on.
"""

import numpy as np

from pcanet import tensor as T
from pcanet.coattention import FeaturePair, coattend
from pcanet.tensor import Tensor

np.set_printoptions(precision=3, suppress=True)
rng = np.random.default_rng(0)

with T.precision(64):
    # channel 0 is strong in both maps, channel 2 only in the second one
    f1 = rng.uniform(0, 0.2, size=(3, 4, 4))
    f2 = rng.uniform(0, 0.2, size=(3, 4, 4))
    f1[0] += 1.0
    f2[0] += 1.0
    f2[2] += 0.6

    fw1, fw2, weights = coattend(FeaturePair(Tensor(f1), Tensor(f2)))
    print("similarity F1' F2'^T\n", weights.similarity.data)
    print("channel weights W = softmax_rows(-similarity)\n", weights.w.data)
    print("row sums", weights.w.data.sum(axis=1))

    # a single channel has nothing to attend to
    _, _, solo = coattend(FeaturePair(Tensor(f1[:1]), Tensor(f2[:1])))
    print("one-channel weights", solo.w.data)

    # swapping channels in both maps permutes W the same way
    perm = [2, 0, 1]
    _, _, swapped = coattend(FeaturePair(Tensor(f1[perm]), Tensor(f2[perm])))
    print("permutation equivariant:", np.allclose(swapped.w.data, weights.w.data[np.ix_(perm, perm)]))

    print("GAP of F1 before", f1.mean(axis=(1, 2)))
    print("GAP of F1 after ", fw1.data.mean(axis=(1, 2)))

    # gradients flow into both members of the pair
    a, b = Tensor(f1, requires_grad=True), Tensor(f2, requires_grad=True)
    out, _, _ = coattend(FeaturePair(a, b))
    T.backward(T.tsum(out))
    print("grad reaches F2:", bool(np.abs(b.grad).sum() > 0))
