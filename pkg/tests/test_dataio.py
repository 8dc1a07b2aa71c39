import numpy as np
import pytest

from domainproto.dataio import (
    CROSS_SESSION,
    SINGLE_SESSION,
    AuditedDataset,
    CsvSchema,
    Dataset,
    SynthConfig,
    apply_fold,
    inject_label_noise,
    load_csv,
    make_splits,
    subject_group,
    synth_generate,
    write_csv,
)
from domainproto.errors import ConfigError, DimensionError, ParseError, ValidationError


def small_csv(tmp_path, rows, header="f0,f1,f2,label,subject,session"):
    path = tmp_path / "data.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestLoadCsv:
    def test_basic_load(self, tmp_path):
        path = small_csv(
            tmp_path,
            [
                "0.1,0.2,0.3,0,0,0",
                "1.1,1.2,1.3,1,0,0",
                "2.1,2.2,2.3,0,1,0",
                "3.1,3.2,3.3,1,1,0",
            ],
        )
        ds = load_csv(path)
        assert len(ds) == 4
        assert ds.feature_dim == 3
        assert ds.n_subjects == 2
        assert ds.n_classes == 2
        np.testing.assert_allclose(ds.features[1], [1.1, 1.2, 1.3])
        assert ds.labels.tolist() == [0, 1, 0, 1]  # row order preserved

    def test_missing_feature_column_is_dimension_error(self, tmp_path):
        path = small_csv(tmp_path, ["0.1,0.2,0.3,0,0,0", "1.1,1.2,1,0,0"])
        with pytest.raises(DimensionError, match="row 3"):
            load_csv(path)

    def test_unparseable_value_names_row(self, tmp_path):
        path = small_csv(tmp_path, ["0.1,0.2,0.3,0,0,0", "a,0.2,0.3,0,1,0"])
        with pytest.raises(ParseError, match="row 3"):
            load_csv(path)

    def test_nonfinite_feature_rejected(self, tmp_path):
        path = small_csv(tmp_path, ["0.1,nan,0.3,0,0,0", "1.0,1.0,1.0,0,1,0"])
        with pytest.raises(ValidationError, match="row 2"):
            load_csv(path)

    def test_arbitrary_ids_are_densified_with_mapping(self, tmp_path):
        path = small_csv(
            tmp_path,
            ["0.0,0.0,0.0,happy,s07,2", "1.0,1.0,1.0,sad,s01,1"],
        )
        ds = load_csv(path)
        assert ds.id_maps["subject"] == {"s01": 0, "s07": 1}
        assert ds.id_maps["label"] == {"happy": 0, "sad": 1}
        assert ds.id_maps["session"] == {"1": 0, "2": 1}  # chronological order
        assert ds.subjects.tolist() == [1, 0]

    def test_custom_schema(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("emotion,subj,sess,f0,f1\n2,9,1,0.5,0.6\n0,8,1,0.7,0.8\n")
        ds = load_csv(path, CsvSchema(label="emotion", subject="subj", session="sess"))
        assert ds.feature_dim == 2
        assert ds.n_classes == 2

    def test_missing_file_raises_file_not_found(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "missing.csv")

    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(n_subjects=3, n_classes=2, feature_dim=5, per_class_count=4, seed=3)
        ds = synth_generate(cfg)
        path = tmp_path / "rt.csv"
        write_csv(ds, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.subjects, ds.subjects)
        np.testing.assert_array_equal(back.sessions, ds.sessions)


class TestDatasetInvariants:
    def test_all_subjects_must_occur(self):
        with pytest.raises(ValidationError):
            Dataset(
                features=np.zeros((2, 3)),
                labels=np.zeros(2, int),
                subjects=np.zeros(2, int),
                sessions=np.zeros(2, int),
                n_classes=1,
                n_subjects=2,
                n_sessions=1,
            )

    def test_arrays_are_frozen(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 3, seed=0))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 99.0

    def test_sample_view(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 3, seed=1))
        s = ds.sample(5)
        assert s.features.shape == (4,)
        assert 0 <= s.class_label < 2
        assert sum(1 for _ in ds.samples()) == len(ds)


class TestSynthGenerate:
    def test_counts_and_determinism(self):
        cfg = SynthConfig(n_subjects=3, n_classes=2, feature_dim=8, per_class_count=50, seed=7)
        a = synth_generate(cfg)
        b = synth_generate(cfg)
        assert len(a) == 3 * 2 * 50
        np.testing.assert_array_equal(a.features, b.features)  # bitwise identical
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_zero_domain_shift_gives_identical_subject_distributions(self):
        cfg = SynthConfig(4, 2, 6, 100, domain_shift_scale=0.0, seed=1)
        ds = synth_generate(cfg)
        # subject means coincide up to sampling noise
        means = [ds.features[ds.subject_rows(n)].mean(axis=0) for n in range(4)]
        for m in means[1:]:
            assert np.linalg.norm(m - means[0]) < 0.5

    def test_zero_class_separation_is_chance_level(self):
        # oracle: uniform labels are unguessable; a centroid classifier on a
        # train split stays within 5 points of 1/M on 1000+ held-out samples
        cfg = SynthConfig(2, 2, 8, 600, class_separation=0.0, domain_shift_scale=0.0, seed=5)
        ds = synth_generate(cfg)
        rng = np.random.default_rng(0)
        order = rng.permutation(len(ds))
        train, test = order[:1000], order[1000:]
        cents = [ds.features[train][ds.labels[train] == m].mean(axis=0) for m in range(2)]
        d = np.stack([((ds.features[test] - c) ** 2).sum(axis=1) for c in cents])
        acc = (d.argmin(axis=0) == ds.labels[test]).mean()
        assert len(test) >= 1000
        assert abs(acc - 0.5) < 0.05

    def test_planted_groups_share_offsets(self):
        cfg = SynthConfig(
            6, 2, 8, 50, domain_shift_scale=5.0, n_domain_groups=3,
            within_group_scale=0.05, seed=2,
        )
        ds = synth_generate(cfg)
        assert [subject_group(n, cfg) for n in range(6)] == [0, 0, 1, 1, 2, 2]
        means = np.stack([ds.features[ds.subject_rows(n)].mean(axis=0) for n in range(6)])
        within = np.linalg.norm(means[0] - means[1])
        across = np.linalg.norm(means[0] - means[2])
        assert across > 3.0 * within

    def test_sessions_generated(self):
        cfg = SynthConfig(2, 2, 4, 5, n_sessions=3, session_shift_scale=1.0, seed=0)
        ds = synth_generate(cfg)
        assert ds.n_sessions == 3
        assert set(ds.sessions.tolist()) == {0, 1, 2}

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(0, 2, 4, 5)
        with pytest.raises(ConfigError):
            SynthConfig(2, 2, 1, 5)
        with pytest.raises(ConfigError):
            SynthConfig(2, 2, 4, 5, n_domain_groups=3)


class TestInjectLabelNoise:
    def test_eta_zero_is_identity(self):
        ds = synth_generate(SynthConfig(2, 3, 4, 10, seed=0))
        noisy = inject_label_noise(ds, 0.0, seed=1)
        np.testing.assert_array_equal(noisy.labels, ds.labels)
        np.testing.assert_array_equal(noisy.features, ds.features)

    def test_eta_one_binary_flips_everything(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 10, seed=0))
        noisy = inject_label_noise(ds, 1.0, seed=1)
        np.testing.assert_array_equal(noisy.labels, 1 - ds.labels)

    def test_exact_count_changed_and_never_self(self):
        ds = synth_generate(SynthConfig(2, 3, 4, 167, seed=0))  # 1002 samples
        for eta in (0.05, 0.1, 0.2, 0.3):
            noisy = inject_label_noise(ds, eta, seed=2)
            assert (noisy.labels != ds.labels).sum() == round(eta * len(ds))

    def test_thousand_samples_thirty_percent(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 250, seed=0))  # 1000 samples
        noisy = inject_label_noise(ds, 0.3, seed=3)
        assert (noisy.labels != ds.labels).sum() == 300

    def test_original_untouched_and_deterministic(self):
        ds = synth_generate(SynthConfig(2, 3, 4, 20, seed=0))
        before = ds.labels.copy()
        a = inject_label_noise(ds, 0.5, seed=4)
        b = inject_label_noise(ds, 0.5, seed=4)
        np.testing.assert_array_equal(ds.labels, before)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_eta_out_of_range(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 5, seed=0))
        with pytest.raises(ConfigError):
            inject_label_noise(ds, 1.5, seed=0)


class TestSplits:
    def test_single_session_fold_structure(self):
        ds = synth_generate(SynthConfig(15, 3, 4, 2, n_sessions=3, seed=0))
        plan = make_splits(ds, SINGLE_SESSION)
        assert len(plan.folds) == 15
        for i, fold in enumerate(plan.folds):
            assert fold.target_subject == i
            assert len(fold.source_subjects) == 14
            assert i not in fold.source_subjects
            assert set(fold.source_subjects) | {i} == set(range(15))
            assert fold.session_filter == 0

    def test_two_subject_minimal_case(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 3, seed=0))
        plan = make_splits(ds, SINGLE_SESSION)
        assert len(plan.folds) == 2
        assert plan.folds[0].source_subjects == (1,)

    def test_cross_session_keeps_all_sessions(self):
        ds = synth_generate(SynthConfig(3, 2, 4, 4, n_sessions=3, seed=0))
        plan = make_splits(ds, CROSS_SESSION)
        src, tgt = apply_fold(ds, plan.folds[0])
        assert set(src.sessions.tolist()) == {0, 1, 2}
        assert set(tgt.sessions.tolist()) == {0, 1, 2}

    def test_single_session_filters_both_sides(self):
        ds = synth_generate(SynthConfig(3, 2, 4, 4, n_sessions=2, seed=0))
        plan = make_splits(ds, SINGLE_SESSION)
        src, tgt = apply_fold(ds, plan.folds[1])
        assert set(src.sessions.tolist()) == {0}
        assert set(tgt.sessions.tolist()) == {0}

    def test_target_never_in_source(self):
        ds = synth_generate(SynthConfig(5, 2, 4, 6, seed=1))
        plan = make_splits(ds, SINGLE_SESSION)
        for fold in plan.folds:
            src, tgt = apply_fold(ds, fold)
            # all target rows belong to the held-out subject in the original ds
            orig_rows = ds.subject_rows(fold.target_subject)
            assert len(tgt) == len(orig_rows)
            assert src.n_subjects == 4
            assert len(src) + len(tgt) == len(ds)

    def test_source_subjects_redensified(self):
        ds = synth_generate(SynthConfig(4, 2, 4, 3, seed=0))
        plan = make_splits(ds, SINGLE_SESSION)
        src, _ = apply_fold(ds, plan.folds[0])  # held out subject 0
        assert set(np.unique(src.subjects)) == {0, 1, 2}
        assert src.id_maps["subject"] == {1: 0, 2: 1, 3: 2}

    def test_too_few_subjects_rejected(self):
        ds = synth_generate(SynthConfig(2, 2, 4, 3, seed=0))
        single = Dataset(
            features=ds.features[ds.subjects == 0],
            labels=ds.labels[ds.subjects == 0],
            subjects=ds.subjects[ds.subjects == 0],
            sessions=ds.sessions[ds.subjects == 0],
            n_classes=2, n_subjects=1, n_sessions=1,
        )
        with pytest.raises(ConfigError):
            make_splits(single, SINGLE_SESSION)
        with pytest.raises(ConfigError):
            make_splits(ds, "bogus")


def test_audited_dataset_counts_reads():
    ds = synth_generate(SynthConfig(2, 2, 4, 3, seed=0))
    audited = AuditedDataset(ds)
    assert audited.reads == 0
    _ = audited.features
    _ = audited.labels
    assert audited.reads == 2
    assert len(audited) == len(ds)
    assert audited.n_classes == 2
