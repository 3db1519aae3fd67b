import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal as sps

from ecgmi import MI, NORMAL
from ecgmi.errors import InvalidCutoff, NoBeatsFound, SignalTooShort, TooFewBeats
from ecgmi.sigprep import (
    FILTERED,
    RAW,
    FilterSpec,
    PeakAnnotations,
    bandpass_filter,
    butter_bandpass_sos,
    detect_peaks,
    detect_r_peaks,
    prepare_signal,
    read_segments,
    segment_beats,
    segment_length,
    sos_response,
    write_segments,
)
from ecgmi.synthetic import SyntheticSpec, generate_synthetic

FS = 1000.0


def steady_amplitude(y, fs=FS, skip=2.0):
    return np.max(np.abs(y[int(skip * fs) : -int(skip * fs)]))


class TestFilterDesign:
    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    @pytest.mark.parametrize("band,fs", [((0.5, 40.0), 1000.0), ((5.0, 15.0), 360.0), ((1.0, 100.0), 500.0)])
    def test_matches_reference_design(self, order, band, fs):
        # independent design from scipy; compare frequency responses, not coefficients
        ref = sps.butter(order, band, btype="bandpass", output="sos", fs=fs)
        ours = butter_bandpass_sos(*band, fs, order)
        assert ours.shape == (order, 6)
        f = np.linspace(0, fs / 2 * 0.999, 512)
        _, h_ref = sps.sosfreqz(ref, worN=f, fs=fs)
        np.testing.assert_allclose(sos_response(ours, f, fs), h_ref, atol=1e-9)

    def test_cutoffs_are_half_power(self):
        sos = butter_bandpass_sos(0.5, 40, FS, 2)
        np.testing.assert_allclose(np.abs(sos_response(sos, [0.5, 40.0], FS)), 2**-0.5, atol=1e-9)
        assert abs(sos_response(sos, 0.0, FS)) < 1e-12

    @pytest.mark.parametrize("low,high", [(0, 40), (40, 0.5), (0.5, 500), (0.5, 600), (-1, 40)])
    def test_invalid_cutoffs(self, low, high):
        with pytest.raises(InvalidCutoff):
            bandpass_filter(np.zeros(5000), FS, FilterSpec(low, high))

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            bandpass_filter(np.zeros(6), FS, FilterSpec(order=2))


class TestFiltering:
    t = np.arange(int(10 * FS)) / FS

    def test_dc_rejected(self):
        y = bandpass_filter(np.ones(self.t.size), FS)
        assert np.max(np.abs(y[int(2 * FS) :])) < 1e-3

    def test_10hz_zero_phase_amplitude_and_phase(self):
        x = np.sin(2 * np.pi * 10 * self.t)
        y = bandpass_filter(x, FS)
        expected = abs(sos_response(butter_bandpass_sos(0.5, 40, FS, 2), 10.0, FS)) ** 2
        assert 0.98 <= steady_amplitude(y) <= 1.0
        # in-phase and quadrature parts over the middle of the record
        mid = slice(4000, 6000)
        basis = np.c_[x[mid], np.cos(2 * np.pi * 10 * self.t[mid])]
        in_phase, quad = np.linalg.lstsq(basis, y[mid], rcond=None)[0]
        assert in_phase == pytest.approx(expected, abs=1e-5)
        assert abs(quad) < 1e-5

    def test_40hz_single_pass_half_power(self):
        y = bandpass_filter(np.sin(2 * np.pi * 40 * self.t), FS, FilterSpec(zero_phase=False))
        assert steady_amplitude(y) == pytest.approx(2**-0.5, abs=0.02)

    def test_output_length(self):
        assert bandpass_filter(np.random.default_rng(0).normal(size=1234), FS).size == 1234

    @given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 3000))
        lhs = bandpass_filter(a * x + b * y, FS)
        rhs = a * bandpass_filter(x, FS) + b * bandpass_filter(y, FS)
        scale = max(1.0, np.max(np.abs(rhs)))
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale

    @given(st.integers(0, 2**32 - 1))
    def test_time_reversal_symmetry(self, seed):
        x = np.random.default_rng(seed).normal(size=2500)
        fwd = bandpass_filter(x, FS)
        rev = bandpass_filter(x[::-1], FS)[::-1]
        assert np.max(np.abs(fwd - rev)) <= 1e-9 * max(1.0, np.max(np.abs(fwd)))


def synth(n_beats=8, hr=72.0, noise=0.0, label=NORMAL, seed=0):
    rec, r = generate_synthetic(SyntheticSpec(n_beats, hr, FS, noise, label, seed))
    return rec.samples[0], r


class TestPeaks:
    def test_clean_record_all_peaks_within_10ms(self):
        x, truth = synth(8)
        r = detect_peaks(x, FS).r_indices
        assert r.size == 8
        assert np.max(np.abs(r - truth)) <= 10

    def test_zero_signal(self):
        with pytest.raises(NoBeatsFound):
            detect_peaks(np.zeros(10_000), FS)

    def test_short_or_slow_input(self):
        with pytest.raises(SignalTooShort):
            detect_peaks(np.zeros(1000), FS)
        with pytest.raises(SignalTooShort):
            detect_peaks(np.zeros(5000), 200.0)

    @pytest.mark.parametrize("label", [NORMAL, MI])
    def test_noisy_20_beats(self, label):
        x, truth = synth(20, 75, 0.05, label, seed=4)
        r = detect_peaks(x, FS).r_indices
        d = np.abs(r[:, None] - truth[None, :])
        assert np.sum(d.min(axis=0) <= 20) >= 19
        assert np.all(d.min(axis=1) <= 50)

    def test_annotation_invariants(self):
        x, _ = synth(12, 90, 0.05, MI, seed=2)
        ann = detect_peaks(x, FS)
        ann.validate(x.size)
        assert np.all(ann.r_indices - ann.p_indices <= 200)
        assert np.all(ann.t_indices - ann.r_indices >= 120)

    @given(st.floats(0.05, 50.0))
    def test_amplitude_scaling_invariance(self, k):
        x, _ = synth(10, 70, 0.05, NORMAL, seed=11)
        np.testing.assert_array_equal(detect_r_peaks(k * x, FS), detect_r_peaks(x, FS))

    def test_bad_annotations_rejected(self):
        ann = PeakAnnotations(np.array([100, 90]), np.array([50, 60]), np.array([150, 160]))
        with pytest.raises(ValueError):
            ann.validate(1000)


class TestSegments:
    def ann(self, r):
        r = np.asarray(r)
        return PeakAnnotations(r, r - 100, r + 200)

    def test_four_beats_one_segment(self):
        x = np.zeros(5000)
        segs = segment_beats(x, self.ann([500, 1500, 2500, 3500]), FS)
        assert len(segs) == 1
        assert segs[0].start_index == 1500 - 250

    @pytest.mark.parametrize("n", range(4, 9))
    def test_n_beats_give_n_minus_3(self, n):
        r = 500 + 1000 * np.arange(n)
        segs = segment_beats(np.zeros(r[-1] + 500), self.ann(r), FS)
        assert [s.start_index for s in segs] == [int(v) - 250 for v in r[1 : n - 2]]

    def test_tail_zero_padded(self):
        x = np.ones(3200)
        segs = segment_beats(x, self.ann([300, 1000, 1700, 2400]), FS)
        s = segs[0]
        assert s.samples.size == segment_length(FS) == 2000
        assert s.start_index == 750
        np.testing.assert_array_equal(s.samples[: 3200 - 750], 1.0)
        assert np.all(s.samples[3200 - 750 :] == 0)

    def test_too_few_beats(self):
        with pytest.raises(TooFewBeats):
            segment_beats(np.zeros(4000), self.ann([500, 1500, 2500]), FS)

    def test_fast_rhythm_windows_dropped(self):
        r = 400 + 400 * np.arange(10)  # 150 bpm: up to five R peaks per window
        segs = segment_beats(np.zeros(5000), self.ann(r), FS)
        # only the window near the tail, where fewer beats remain, survives
        assert [s.r_offsets for s in segs] == [(250, 650, 1050)]

    def test_slow_rhythm_windows_dropped(self):
        r = 500 + 2000 * np.arange(5)  # 30 bpm: second R falls outside
        assert segment_beats(np.zeros(11000), self.ann(r), FS) == []

    @given(st.floats(45.0, 100.0), st.integers(5, 14))
    def test_windows_hold_their_pair_and_exclude_end_beats(self, hr, n_beats):
        x, truth = synth(n_beats, hr)
        ann = detect_peaks(x, FS)
        r = ann.r_indices
        for s in segment_beats(x, ann, FS, label=MI):
            inside = r[(r >= s.start_index) & (r < s.start_index + 2000)]
            assert 2 <= inside.size <= 3
            assert s.samples.size == 2000
            i = int(np.searchsorted(r, s.start_index + 250))
            assert 1 <= i <= r.size - 3
            assert r[i] in inside and r[i + 1] in inside

    def test_prepare_signal_conditions(self):
        x, _ = synth(10, 70, 0.05)
        raw = prepare_signal(x, FS, record="a", label=NORMAL, noise_condition=RAW)
        filt = prepare_signal(x, FS, record="a", label=NORMAL, noise_condition=FILTERED)
        assert len(raw) == len(filt) == 7
        assert raw[0].segment_id.endswith("_raw") and filt[0].segment_id.endswith("_filtered")
        start = raw[0].start_index
        np.testing.assert_array_equal(raw[0].samples, x[start : start + 2000])

    def test_segment_dump_round_trip(self, tmp_path):
        x, _ = synth(9, 65, 0.02, MI)
        segs = prepare_signal(x, FS, record="rec_1", label=MI, noise_condition=FILTERED)
        write_segments(tmp_path, segs)
        back = read_segments(tmp_path)
        assert [(s.segment_id, s.label, s.start_index) for s in back] == \
               [(s.segment_id, s.label, s.start_index) for s in segs]
        assert all(a.samples.tobytes() == b.samples.tobytes() for a, b in zip(back, segs))
        line = (tmp_path / "index.tsv").read_text().splitlines()[0]
        assert line.split("\t")[1:] == ["rec_1", "MI", "Filtered"]
