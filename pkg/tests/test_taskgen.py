import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auxnas import taskgen
from auxnas.exceptions import ConfigurationError, ParseError, SchemaError
from auxnas.taskgen import CsvSchema, TaskFamily


def test_same_seed_same_dataset():
    fam = TaskFamily(noise_std=(0.5, 0.1))
    a, b = taskgen.generate(fam, 200, 4), taskgen.generate(fam, 200, 4)
    assert a.fingerprint() == b.fingerprint()
    assert taskgen.generate(fam, 200, 5).fingerprint() != a.fingerprint()


def test_fully_related_shared_head_gives_identical_labels():
    ds = taskgen.generate(TaskFamily(relatedness=1.0, shared_head=True), 300, 0)
    np.testing.assert_array_equal(ds.labels[0], ds.labels[1])


def test_unrelated_tasks_are_uncorrelated():
    ds = taskgen.generate(TaskFamily(relatedness=0.0), 10000, 0)
    r = np.corrcoef(ds.labels[0].ravel(), ds.labels[1].ravel())[0, 1]
    assert abs(r) < 0.1


def test_correlation_grows_with_relatedness():
    rs = []
    for rho in (0.0, 0.3, 0.6, 0.9, 1.0):
        ds = taskgen.generate(TaskFamily(relatedness=rho, shared_head=True), 4000, 1)
        rs.append(np.corrcoef(ds.labels[0].ravel(), ds.labels[1].ravel())[0, 1])
    assert all(b > a for a, b in zip(rs, rs[1:]))


def test_teacher_outputs_are_standardized():
    fam = TaskFamily(n_aux=2, noise_std=(0, 0, 0), kinds=("regression",) * 3, out_dims=(2, 1, 3))
    outs = fam.teacher_outputs(np.random.default_rng(0).normal(size=(20000, fam.input_dim)))
    for o in outs:
        np.testing.assert_allclose(o.mean(axis=0), 0.0, atol=0.05)
        np.testing.assert_allclose(o.std(axis=0), 1.0, atol=0.05)


@settings(max_examples=15)
@given(n=st.integers(30, 500), seed=st.integers(0, 2**31 - 1))
def test_splits_partition_the_samples(n, seed):
    ds = taskgen.generate(TaskFamily(), n, seed)
    allidx = np.concatenate([ds.splits[s] for s in taskgen.SPLITS])
    assert sorted(allidx.tolist()) == list(range(n))


def test_classification_labels_and_flips():
    fam = TaskFamily(kinds=("classification", "classification"), out_dims=(3, 3), label_flip=0.0)
    ds = taskgen.generate(fam, 500, 0)
    assert ds.labels[0].dtype == np.int64 and set(np.unique(ds.labels[0])) <= {0, 1, 2}
    flipped = taskgen.generate(TaskFamily(kinds=("classification",) * 2, out_dims=(3, 3),
                                          label_flip=1.0), 500, 0)
    assert not np.any(flipped.labels[0] == ds.labels[0])


@pytest.mark.parametrize("kw", [
    dict(relatedness=1.5), dict(noise_std=(0.1,)), dict(kinds=("regression", "ranking")),
    dict(kinds=("classification", "regression"), out_dims=(1, 1)),
    dict(shared_head=True, out_dims=(1, 2)), dict(input_dim=2), dict(label_flip=2.0)])
def test_family_validation(kw):
    with pytest.raises(ConfigurationError):
        TaskFamily(**kw)


def test_too_few_samples():
    with pytest.raises(ConfigurationError):
        taskgen.generate(TaskFamily(), 10)


def test_csv_round_trip(tmp_path):
    fam = TaskFamily(kinds=("regression", "classification"), out_dims=(2, 3), noise_std=(0.3, 0.0))
    ds = taskgen.generate(fam, 120, 2)
    schema = taskgen.write_csv(ds, tmp_path / "d.csv")
    back = taskgen.load_csv(tmp_path / "d.csv", CsvSchema.from_dict(schema.to_dict()))
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    for a, b in zip(back.labels, ds.labels):
        np.testing.assert_array_equal(a, b)
    for s in taskgen.SPLITS:
        np.testing.assert_array_equal(back.splits[s], ds.splits[s])


def test_csv_without_split_column_gets_seeded_split(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b,t\n" + "".join(f"{i},{-i},{i % 2}\n" for i in range(40)))
    schema = CsvSchema(("a", "b"), (("t",),), ("classification",), split=None)
    one, two = taskgen.load_csv(path, schema, 3), taskgen.load_csv(path, schema, 3)
    assert one.fingerprint() == two.fingerprint()
    assert sum(len(v) for v in one.splits.values()) == 40


def test_csv_errors_name_the_line(tmp_path):
    schema = CsvSchema(("a",), (("y",),), ("regression",), split=None)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,2\n3,oops\n")
    with pytest.raises(ParseError) as info:
        taskgen.load_csv(bad, schema)
    assert info.value.line == 3 and "line 3" in str(info.value)
    short = tmp_path / "short.csv"
    short.write_text("a,y\n1,2\n3\n")
    with pytest.raises(ParseError, match="line 3"):
        taskgen.load_csv(short, schema)
    with pytest.raises(SchemaError, match="missing columns: y"):
        (tmp_path / "m.csv").write_text("a,z\n1,2\n")
        taskgen.load_csv(tmp_path / "m.csv", schema)
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ParseError):
        taskgen.load_csv(tmp_path / "e.csv", schema)


def test_unknown_split_tag(tmp_path):
    (tmp_path / "s.csv").write_text("a,y,split\n1,2,train\n3,4,holdout\n")
    with pytest.raises(ParseError, match="line 3"):
        taskgen.load_csv(tmp_path / "s.csv", CsvSchema(("a",), (("y",),), ("regression",)))


def test_schema_from_bad_dict():
    with pytest.raises(SchemaError):
        CsvSchema.from_dict({"inputs": ["a"]})


def test_iterate_yields_split_local_batches():
    ds = taskgen.generate(TaskFamily(), 100, 0)
    batches = list(taskgen.iterate(ds, 10, 0))
    assert len(batches) == len(ds.splits["train"]) // 10
    assert max(b.max() for b in batches) < len(ds.splits["train"])


def test_custom_split_fractions():
    ds = taskgen.generate(TaskFamily(), 1000, 0, (0.15, 0.05, 0.8))
    assert [len(ds.splits[s]) for s in taskgen.SPLITS] == [150, 50, 800]
    assert ds.manifest()["split_fractions"] == [0.15, 0.05, 0.8]
    for bad in [(0.5, 0.5), (0.6, 0.3, 0.3), (0.0, 0.5, 0.5), (0.5, 0.5, 0.0), (1.2, -0.1, -0.1)]:
        with pytest.raises(ConfigurationError):
            taskgen.generate(TaskFamily(), 100, 0, bad)
