import json

import pytest

import twincal as tc
from twincal.calibrator import infeasible_report


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadHistogram:
    def test_vacuum_only(self, tmp_path):
        path = write(tmp_path, "h.csv", "cs,ci,count\n0,0,100000\n")
        hist = tc.load_histogram(path)
        assert hist.entries == {(0, 0): 100000}
        assert hist.shots == 100000

    def test_shots_is_column_sum(self, tmp_path):
        path = write(tmp_path, "h.csv", "cs,ci,count\n1,1,60\n0,0,40\n")
        hist = tc.load_histogram(path)
        assert hist.shots == 100
        assert len(hist.entries) == 2

    def test_duplicate_cell_rejected(self, tmp_path):
        path = write(tmp_path, "h.csv", "cs,ci,count\n1,1,60\n1,1,40\n")
        with pytest.raises(tc.DuplicateEntry):
            tc.load_histogram(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            tc.load_histogram(tmp_path / "nope.csv")

    def test_crlf_accepted(self, tmp_path):
        path = write(tmp_path, "h.csv", "cs,ci,count\r\n2,3,7\r\n0,0,13\r\n")
        hist = tc.load_histogram(path)
        assert hist.entries == {(2, 3): 7, (0, 0): 13}

    @pytest.mark.parametrize("body", [
        "cs,ci,count\n1,1\n",            # missing field
        "cs,ci,count\n1,1,1,1\n",        # extra field
        "cs,ci,count\n1.5,1,10\n",       # non-integer coordinate
        "cs,ci,count\n-1,0,10\n",        # negative coordinate
        "cs,ci,count\n1,1,-5\n",         # negative count
        "cs,ci,count\n1,1,0\n",          # zero count
        "cs,ci,count\nx,1,10\n",         # junk
        "wrong,header,here\n1,1,10\n",   # bad header
    ])
    def test_malformed_rows(self, tmp_path, body):
        path = write(tmp_path, "h.csv", body)
        with pytest.raises(tc.ParseError):
            tc.load_histogram(path)

    def test_empty_data(self, tmp_path):
        path = write(tmp_path, "h.csv", "cs,ci,count\n")
        with pytest.raises(tc.EmptyHistogram):
            tc.load_histogram(path)

    def test_no_silent_drops(self, tmp_path):
        # every physical row is either an entry or a blank line
        body = "cs,ci,count\n1,2,3\n\n4,5,6\n"
        hist = tc.load_histogram(write(tmp_path, "h.csv", body))
        assert len(hist.entries) == 2


class TestDarkRecord:
    def test_zero_dark(self, tmp_path):
        path = write(tmp_path, "d.csv", "ds,di,count\n0,0,1000\n")
        rec = tc.load_dark_record(path)
        m = tc.photocount_moments(rec)
        assert m.mean_s == 0.0 and m.mean_i == 0.0 and m.cross == 0.0

    def test_hand_moments(self, tmp_path):
        path = write(tmp_path, "d.csv", "ds,di,count\n1,0,100\n0,0,900\n")
        m = tc.photocount_moments(tc.load_dark_record(path))
        assert m.mean_s == pytest.approx(0.1, abs=0)
        assert m.mean_i == 0.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            tc.load_dark_record(tmp_path / "gone.csv")

    def test_wrong_header_for_kind(self, tmp_path):
        path = write(tmp_path, "d.csv", "cs,ci,count\n0,0,10\n")
        with pytest.raises(tc.ParseError):
            tc.load_dark_record(path)


class TestRoundTrip:
    def test_histogram_roundtrip(self, tmp_path, small_experiment):
        _, hist, dark, _ = small_experiment
        hp, dp = tmp_path / "h.csv", tmp_path / "d.csv"
        tc.write_histogram(hist, hp)
        tc.write_dark_record(dark, dp)
        assert tc.load_histogram(hp).entries == hist.entries
        assert tc.load_histogram(hp).shots == hist.shots
        assert tc.load_dark_record(dp).entries == dark.entries

    def test_report_roundtrip_bit_exact(self, tmp_path):
        report = {
            "eta_s": 0.24300000000417, "eta_i": 0.235, "mean_pairs": 9.8812345678901,
            "field": {"b_p": 0.058, "M_p": 170.0, "b_s": 33.2, "M_s": 7e-4,
                      "b_i": 10.6, "M_i": 0.0101},
            "declination": 2.35e-3, "stderr": {"eta_s": 1.1e-3},
            "baseline": {"eta_s_klyshko": 0.2537, "eta_i_klyshko": 0.2476},
            "status": "converged",
            "inputs": {"histogram_sha256": "ab" * 32, "dark_sha256": "cd" * 32},
            "config": {"grid_step": 0.005},
        }
        path = tmp_path / "report.json"
        tc.write_report(report, path)
        loaded = tc.load_report(path)
        assert loaded == report
        assert loaded["eta_s"] == report["eta_s"]  # bit-exact float

    def test_report_readonly_target(self, tmp_path):
        with pytest.raises(OSError):
            tc.write_report({"eta_s": 1.0}, tmp_path / "no" / "such" / "dir" / "r.json")

    def test_infeasible_report_status(self, tmp_path):
        report = infeasible_report(None, "no feasible region")
        path = tmp_path / "r.json"
        tc.write_report(report, path)
        assert tc.load_report(path)["status"] == "infeasible-everywhere"


class TestValidation:
    def test_sum_mismatch(self):
        with pytest.raises(ValueError):
            tc.PhotocountHistogram({(0, 0): 5}, shots=6)

    def test_empty(self):
        with pytest.raises(tc.EmptyHistogram):
            tc.PhotocountHistogram({}, shots=0)

    def test_negative_coordinate(self):
        with pytest.raises(ValueError):
            tc.PhotocountHistogram({(-1, 0): 5}, shots=5)


class TestProductDark:
    def test_product_counts(self):
        sig = tc.DarkCountRecord({(0, 0): 9, (1, 0): 1}, 10)
        idl = tc.DarkCountRecord({(0, 0): 4, (0, 2): 1}, 5)
        joint = tc.product_dark(sig, idl)
        assert joint.shots == 50
        assert joint.entries == {(0, 0): 36, (0, 2): 9, (1, 0): 4, (1, 2): 1}
        ms = tc.photocount_moments(joint)
        assert ms.mean_s == pytest.approx(0.1)
        assert ms.mean_i == pytest.approx(0.4)
        assert ms.cross == pytest.approx(0.04)  # independent arms factorize


def test_sha256(tmp_path):
    path = tmp_path / "x.csv"
    path.write_bytes(b"cs,ci,count\n0,0,1\n")
    digest = tc.sha256_of(path)
    assert len(digest) == 64
    assert digest == tc.sha256_of(path)
