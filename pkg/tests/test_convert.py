import pickle

import numpy as np
import scipy.sparse as sp

from mcn.convert import convert_planetoid
from mcn.graph import UNLABELED, load_dataset


def write_raw(tmp_path):
    # 7 nodes: 2 train, 2 more in allx, test rows 4..6 listed out of order, node 6 has no row
    def dump(part, obj):
        with open(tmp_path / f"ind.toy.{part}", "wb") as fh:
            pickle.dump(obj, fh)
    allx = sp.csr_matrix(np.arange(12, dtype=float).reshape(4, 3))
    ally = np.eye(2)[[0, 1, 1, 0]]
    dump("x", allx[:2])
    dump("y", ally[:2])
    dump("allx", allx)
    dump("ally", ally)
    dump("tx", sp.csr_matrix([[1.0, 0, 0], [0, 0, 2.0]]))
    dump("ty", np.eye(2)[[1, 0]])
    dump("graph", {0: [1, 1], 1: [0, 2], 2: [1, 3], 3: [2, 5], 5: [3, 4], 4: [5, 6], 6: [4]})
    (tmp_path / "ind.toy.test.index").write_text("5\n4\n")


def test_convert_planetoid_layout(tmp_path):
    write_raw(tmp_path)
    out = tmp_path / "toy"
    convert_planetoid(tmp_path, "toy", out, n_val=2)
    d = load_dataset(out)
    assert d.graph.n_nodes == 7 and d.graph.n_edges == 6
    np.testing.assert_array_equal(d.labels.labels, [0, 1, 1, 0, 0, 1, UNLABELED])
    np.testing.assert_array_equal(d.splits.train, [0, 1])
    np.testing.assert_array_equal(d.splits.val, [2, 3])
    np.testing.assert_array_equal(d.splits.test, [4, 5])
    x = d.features.values.toarray()
    np.testing.assert_array_equal(x[5], [1, 0, 0])
    np.testing.assert_array_equal(x[4], [0, 0, 2])
    np.testing.assert_array_equal(x[6], 0)
