from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import make_recording
from fogedge.errors import DataError
from fogedge.evaluation.cohort import generate_synthetic_cohort
from fogedge.signals import (DatasetManifest, ModalityKind, Recording, Stream, Window, assign_label,
                             labeled_windows, load_dataset, load_recording, overlap_fraction,
                             parse_modality, parse_rate, save_dataset, segment_windows, select_channels,
                             window_count)


def _write_subject(root, rows, unit="uV", rate="500", annotations="", header=None):
    (root / "S01").mkdir(parents=True, exist_ok=True)
    hdr = header or f"# modality=EEG channel=Fz rate_hz={rate} unit={unit}"
    (root / "S01" / "EEG_Fz.txt").write_text(hdr + "\n" + "\n".join(rows) + "\n")
    (root / "S01" / "annotations.tsv").write_text(annotations)
    (root / "manifest.yaml").write_text(
        "schema_version: 1\n"
        "subjects:\n"
        "- subject_id: S01\n"
        "  annotations: S01/annotations.tsv\n"
        "  streams:\n"
        "  - {file: S01/EEG_Fz.txt, modality: EEG, channel: Fz, unit: " + unit + "}\n")
    return root / "manifest.yaml"


class TestLoadRecording:
    def test_duration_from_sample_count(self, tmp_path):
        path = _write_subject(tmp_path, ["0.5"] * 5000)
        rec = load_recording(DatasetManifest.load(path).subjects[0])
        assert rec.duration_s == 10.0
        assert rec.rate(ModalityKind.EEG) == 500

    def test_overlapping_intervals_rejected(self, tmp_path):
        path = _write_subject(tmp_path, ["0"] * 7000, rate="500", annotations="5 9\n8 12\n")
        with pytest.raises(DataError, match="overlapping intervals"):
            load_dataset(path)

    def test_out_of_range_interval_rejected(self, tmp_path):
        path = _write_subject(tmp_path, ["0"] * 5000, annotations="8 12\n")
        with pytest.raises(DataError, match="outside"):
            load_dataset(path)

    def test_malformed_row_names_file_and_line(self, tmp_path):
        path = _write_subject(tmp_path, ["1.0", "2.0", "abc", "4.0"])
        with pytest.raises(DataError, match=r"EEG_Fz\.txt:4"):
            load_dataset(path)

    def test_unknown_modality_tag(self, tmp_path):
        path = _write_subject(tmp_path, ["0"] * 10)
        text = path.read_text().replace("modality: EEG", "modality: ECG")
        path.write_text(text)
        with pytest.raises(DataError, match="unknown modality"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        path = _write_subject(tmp_path, ["0"] * 10)
        (tmp_path / "S01" / "EEG_Fz.txt").unlink()
        with pytest.raises(DataError, match="missing file"):
            load_dataset(path)

    def test_unit_conversion_to_microvolts(self, tmp_path):
        path = _write_subject(tmp_path, ["0.002"] * 500, unit="mV")
        rec = load_dataset(path)[0]
        assert_allclose(rec.block(ModalityKind.EEG), 2.0)

    def test_fractional_rate(self, tmp_path):
        path = _write_subject(tmp_path, ["0"] * 1001, rate="1001/10")
        rec = load_dataset(path)[0]
        assert rec.rate(ModalityKind.EEG) == Fraction(1001, 10)
        assert rec.duration_s == pytest.approx(10.0)

    def test_synthetic_cohort_round_trip(self, tmp_path):
        cohort = generate_synthetic_cohort(n_subjects=3, windows_per_subject=3, seed=3)
        loaded = load_dataset(save_dataset(cohort, tmp_path / "ds"))
        assert len(loaded) == 3
        for a, b in zip(cohort, loaded):
            assert a.subject_id == b.subject_id
            assert a.duration_s == b.duration_s
            assert a.fog_intervals == b.fog_intervals
            assert a.streams == b.streams

    def test_manifest_schema_version_checked(self, tmp_path):
        path = _write_subject(tmp_path, ["0"] * 10)
        path.write_text(path.read_text().replace("schema_version: 1", "schema_version: 9"))
        with pytest.raises(DataError, match="schema_version"):
            load_dataset(path)


class TestRecording:
    def test_mixed_rates_within_modality_rejected(self):
        a = Stream("EEG", "Fz", 100, np.zeros(100))
        b = Stream("EEG", "Cz", 200, np.zeros(200))
        with pytest.raises(DataError, match="mixed sample rates"):
            Recording("S", (a, b), (), 1.0)

    def test_inconsistent_length_rejected(self):
        with pytest.raises(DataError, match="inconsistent"):
            Recording("S", (Stream("EEG", "Fz", 100, np.zeros(150)),), (), 1.0)

    def test_stream_samples_are_read_only(self):
        s = Stream("EEG", "Fz", 100, np.zeros(10))
        with pytest.raises(ValueError):
            s.samples[0] = 1.0

    def test_parse_helpers(self):
        assert parse_modality("emg") is ModalityKind.EMG
        assert parse_rate("250") == 250
        with pytest.raises(DataError):
            parse_rate("-3")


class TestSegmentWindows:
    def test_ten_seconds_three_by_one_and_a_half(self):
        ws = segment_windows(make_recording(duration_s=10.0), 3.0, 1.5)
        assert [w.start_s for w in ws] == [0.0, 1.5, 3.0, 4.5, 6.0]

    @pytest.mark.parametrize("stride", [0.5, 1.5, 3.0, 7.0])
    def test_window_equal_to_recording(self, stride):
        ws = segment_windows(make_recording(duration_s=3.0), 3.0, stride)
        assert len(ws) == 1 and ws[0].start_s == 0.0

    def test_window_longer_than_recording(self):
        with pytest.raises(DataError):
            segment_windows(make_recording(duration_s=2.0), 3.0, 1.5)

    def test_block_shapes_follow_rates(self):
        w = segment_windows(make_recording(duration_s=6.0), 3.0, 1.5)[1]
        assert w.blocks[ModalityKind.EEG].shape == (2, 300)
        assert w.blocks[ModalityKind.EMG].shape == (1, 600)
        assert w.blocks[ModalityKind.ACC].shape == (2, 150)

    def test_window_samples_match_recording(self):
        rec = make_recording(duration_s=6.0)
        w = segment_windows(rec, 3.0, 1.5)[2]
        assert_allclose(w.blocks[ModalityKind.EMG], rec.block(ModalityKind.EMG)[:, 600:1200])

    @settings(max_examples=200, deadline=None)
    @given(duration=st.floats(0.5, 120), length=st.floats(0.1, 10), stride=st.floats(0.05, 10))
    def test_window_count_matches_enumeration(self, duration, length, stride):
        expected = 0
        while expected * stride + length <= duration + 1e-9:
            expected += 1
        assert window_count(duration, length, stride) == expected


class TestAssignLabel:
    def _window(self, start, length=3.0):
        return Window("S", start, length, {})

    def test_partial_overlap_above_threshold(self):
        w = assign_label(self._window(3.0), [(5.0, 9.0)], 0.25)
        assert w.label_overlap_fraction == pytest.approx(1 / 3)
        assert w.label == 1

    def test_no_intervals(self):
        w = assign_label(self._window(0.0), [], 0.25)
        assert w.label_overlap_fraction == 0.0 and w.label == 0

    def test_two_intersections_below_threshold(self):
        w = assign_label(self._window(2.0), [(2.5, 3.0), (4.0, 4.5)], 0.5)
        assert w.label_overlap_fraction == pytest.approx(1 / 3)
        assert w.label == 0

    def test_threshold_domain(self):
        with pytest.raises(DataError):
            assign_label(self._window(0.0), [], 0.0)

    @settings(max_examples=200, deadline=None)
    @given(start=st.integers(0, 50), ivs=st.lists(st.tuples(st.integers(0, 60), st.integers(1, 10)),
                                                  max_size=5))
    def test_fraction_matches_grid_count(self, start, ivs):
        # disjoint integer-millisecond intervals; oracle counts covered milliseconds
        intervals, cursor = [], 0
        for gap, width in ivs:
            a = cursor + gap
            intervals.append((a / 10, (a + width) / 10))
            cursor = a + width
        grid = np.zeros(2000, dtype=bool)
        for a, b in intervals:
            grid[int(round(a * 100)):int(round(b * 100))] = True
        s = start * 10
        expected = grid[s:s + 300].mean()
        assert overlap_fraction(start / 10, 3.0, intervals) == pytest.approx(expected, abs=1e-9)

    def test_labeled_windows_use_recording_intervals(self):
        rec = make_recording(duration_s=10.0, intervals=[(5.0, 9.0)])
        labels = [w.label for w in labeled_windows(rec, 3.0, 1.5, 0.25)]
        assert labels == [0, 0, 1, 1, 1]


class TestSelectChannels:
    def test_full_set_is_identity(self):
        rec = make_recording()
        spec = [(s.modality, s.channel) for s in rec.streams]
        assert select_channels(rec, spec) == rec

    def test_subset_in_request_order(self):
        names = tuple(f"E{i}" for i in range(25))
        rec = make_recording(channels={ModalityKind.EEG: names}, rates={ModalityKind.EEG: 50})
        out = select_channels(rec, [("EEG", "E7"), ("EEG", "E2"), ("EEG", "E19"), ("EEG", "E0")])
        assert out.channel_names(ModalityKind.EEG) == ("E7", "E2", "E19", "E0")
        assert_allclose(out.block(ModalityKind.EEG)[1], rec.stream(ModalityKind.EEG, "E2").samples)

    def test_unknown_channel_named_in_error(self):
        with pytest.raises(DataError, match="EEG_99"):
            select_channels(make_recording(), [("EEG", "EEG_99")])
