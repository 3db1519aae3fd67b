import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecgmi import MI, NORMAL, OTHER
from ecgmi.errors import (
    ChecksumMismatch,
    LeadNotFound,
    MalformedHeader,
    TruncatedData,
    UnsupportedFormat,
)
from ecgmi.ingest import (
    EcgRecord,
    SignalHeader,
    SignalSpec,
    admitted,
    extract_label,
    find_headers,
    load_record,
    parse_header,
    read_manifest,
    read_signals,
    select_lead,
    wfdb_checksum,
    write_header,
    write_manifest,
    write_record,
)

from conftest import PTB_LEADS, ptb_style_header


def one_signal_header(gain_field="2000", n=2):
    return f"rec 1 1000 {n}\nrec.dat 16 {gain_field} 16 0 0 0 0 ii\n"


class TestParseHeader:
    def test_ptb_record_line(self):
        h = parse_header(ptb_style_header().encode())
        assert (h.record_name, h.n_signals, h.sampling_rate, h.n_samples) == ("s0010_re", 15, 1000.0, 38400)
        assert h.lead_names == PTB_LEADS

    def test_missing_gain_defaults_to_200(self):
        h = parse_header("r 1 1000 10\nr.dat 16\n")
        assert h.signals[0].adc_gain == 200.0
        assert h.signals[0].adc_baseline == 0

    def test_zero_gain_defaults_to_200(self):
        assert parse_header(one_signal_header("0")).signals[0].adc_gain == 200.0

    def test_two_signal_gains_field_by_field(self):
        text = ("two 2 500 3\n"
                "two.dat 16 2000(10)/mV 12 0 5 100 0 ii\n"
                "two.dat 16 1000/mV 12 0 -3 -7 0 v1\n"
                "# Reason for admission: Healthy control\n")
        h = parse_header(text)
        a, b = h.signals
        assert (a.adc_gain, a.adc_baseline, a.initial_value, a.checksum, a.lead_name) == (2000, 10, 5, 100, "ii")
        assert (b.adc_gain, b.adc_baseline, b.initial_value, b.checksum, b.lead_name) == (1000, 0, -3, -7, "v1")
        assert h.comments == ("# Reason for admission: Healthy control",)

    def test_missing_record_line(self):
        with pytest.raises(MalformedHeader):
            parse_header("# only a comment\n")

    def test_signal_count_mismatch(self):
        with pytest.raises(MalformedHeader):
            parse_header("r 2 1000 10\nr.dat 16 200 16 0 0 0 0 ii\n")

    @pytest.mark.parametrize("fmt", ["212", "80", "16x1", "8"])
    def test_other_formats_rejected(self, fmt):
        with pytest.raises(UnsupportedFormat):
            parse_header(f"r 1 1000 10\nr.dat {fmt} 200 16 0 0 0 0 ii\n")

    def test_multisegment_rejected(self):
        with pytest.raises(UnsupportedFormat):
            parse_header("multi/2 1 360 100\nseg1 50\nseg2 50\n")

    def test_round_trip_ptb_fixture(self):
        h = parse_header(ptb_style_header())
        assert parse_header(write_header(h)) == h

    @given(gain=st.integers(1, 5000), base=st.integers(-500, 500), n=st.integers(1, 10**6),
           init=st.integers(-32768, 32767), ck=st.integers(-32768, 32767))
    def test_round_trip_property(self, gain, base, n, init, ck):
        sig = SignalSpec("x.dat", "ii", float(gain), base, initial_value=init, checksum=ck)
        h = SignalHeader("x", 1, 1000.0, n, (sig,), ("# Reason for admission: Healthy control",))
        assert parse_header(write_header(h)) == h


class TestReadSignals:
    def test_zero_and_unit_adu(self):
        h = parse_header(one_signal_header("2000"))
        rec = read_signals(h, np.array([0, 2000], "<i2").tobytes())
        np.testing.assert_array_equal(rec.samples[0], [0.0, 1.0])

    def test_interleaving_by_hand(self):
        h = parse_header("r 2 1000 2\nr.dat 16 1 16 0 0 0 0 a\nr.dat 16 1 16 0 0 0 0 b\n")
        rec = read_signals(h, bytes([1, 0, 2, 0, 3, 0, 4, 0]))
        np.testing.assert_array_equal(rec.samples, [[1, 3], [2, 4]])

    def test_negative_values_and_baseline(self):
        h = parse_header("r 1 1000 2\nr.dat 16 100(-50) 16 0 0 0 0 ii\n")
        rec = read_signals(h, np.array([-150, 50], "<i2").tobytes())
        np.testing.assert_allclose(rec.samples[0], [-1.0, 1.0])

    def test_trailing_bytes_ignored(self):
        h = parse_header(one_signal_header("1", n=2))
        rec = read_signals(h, np.array([7, 8, 9, 10], "<i2").tobytes())
        np.testing.assert_array_equal(rec.samples[0], [7, 8])

    def test_truncated(self):
        h = parse_header(one_signal_header("1", n=3))
        with pytest.raises(TruncatedData):
            read_signals(h, np.array([1, 2], "<i2").tobytes())

    def test_checksum_strict_mode(self):
        h = parse_header("r 1 1000 2\nr.dat 16 1 16 0 1 999 0 ii\n")
        data = np.array([1, 2], "<i2").tobytes()
        read_signals(h, data)  # lenient by default
        with pytest.raises(ChecksumMismatch):
            read_signals(h, data, strict=True)

    @given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=50), st.integers(-3, 3))
    def test_decoding_is_linear(self, values, k):
        h = parse_header(one_signal_header("200", n=len(values)))
        scaled = np.clip(np.array(values) * k, -32768, 32767)
        a = read_signals(h, np.array(values, "<i2").tobytes()).samples
        b = read_signals(h, scaled.astype("<i2").tobytes()).samples
        ok = np.abs(np.array(values) * k) <= 32767
        np.testing.assert_allclose(b[0][ok], k * a[0][ok], rtol=0, atol=1e-12)

    def test_checksum_wraps_to_16_bits(self):
        assert wfdb_checksum(np.array([32767, 1])) == -32768
        assert wfdb_checksum(np.array([-1, -1])) == -2


class TestLabels:
    @pytest.mark.parametrize("text,label", [
        ("# Reason for admission: Myocardial infarction", MI),
        ("# Reason for admission: Healthy control", NORMAL),
        ("# Reason for admission: Dysrhythmia", OTHER),
        ("# reason for admission: MYOCARDIAL INFARCTION", MI),
    ])
    def test_reason_line(self, text, label):
        assert extract_label([text]) == label

    def test_no_comments_is_other(self):
        assert extract_label([]) == OTHER

    def test_reason_line_outranks_history(self):
        comments = ["# Reason for admission: Healthy control", "# Additional diagnoses: no myocardial infarction"]
        assert extract_label(comments) == NORMAL

    def test_admitted_filters_other(self):
        h = parse_header(one_signal_header())
        recs = [EcgRecord(h, np.zeros((1, 2)), lab) for lab in (MI, OTHER, NORMAL)]
        assert [r.label for r in admitted(recs)] == [MI, NORMAL]


class TestLeads:
    def test_ptb_lead_ii_is_channel_1(self):
        h = parse_header(ptb_style_header(n_samples=4))
        samples = np.arange(60, dtype=np.float64).reshape(15, 4)
        rec = EcgRecord(h, samples, MI)
        np.testing.assert_array_equal(select_lead(rec, "ii"), samples[1])

    def test_case_insensitive_and_trimmed(self):
        h = parse_header(one_signal_header())
        rec = EcgRecord(h, np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(select_lead(rec, " II "), [1.0, 2.0])

    def test_absent_lead(self):
        rec = EcgRecord(parse_header(ptb_style_header(n_samples=1)), np.zeros((15, 1)))
        with pytest.raises(LeadNotFound):
            select_lead(rec, "v9")


class TestFiles:
    def test_write_then_load(self, tmp_path, rng):
        h = parse_header(ptb_style_header(n_samples=500))
        adu = rng.integers(-3000, 3000, size=(15, 500))
        base = np.array([s.adc_baseline for s in h.signals])[:, None]
        rec = EcgRecord(h, (adu - base) / 2000.0, MI)
        hea = write_record(tmp_path, rec)
        back = load_record(hea, strict=True)
        np.testing.assert_array_equal(back.samples, rec.samples)
        assert back.label == MI
        assert back.header.signals[3].checksum == wfdb_checksum(adu[3])
        assert back.header.signals[3].initial_value == adu[3, 0]

    def test_manifest(self, tmp_path):
        h = parse_header(one_signal_header())
        recs = [EcgRecord(h, np.zeros((1, 2)), lab) for lab in (MI, OTHER)]
        write_manifest(tmp_path / "m.tsv", recs)
        assert (tmp_path / "m.tsv").read_text() == "rec\tMI\t2\n"
        assert read_manifest(tmp_path / "m.tsv") == [("rec", "MI", 2)]

    def test_find_headers_sorted(self, tmp_path):
        for n in ("b", "a/c"):
            p = tmp_path / f"{n}.hea"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text("x 1\n")
        assert [p.name for p in find_headers(tmp_path)] == ["c.hea", "b.hea"]
