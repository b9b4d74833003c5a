import pytest
from hypothesis import given, strategies as st

from laenet.vlm_profile import (InfeasibleAccuracy, ProfileError, ResolutionEntry, ResolutionProfile,
                                default_profile, min_feasible_resolution, payload_bits, proc_time_s)

P = default_profile()
R384, R768, R1024, R1536 = 384 ** 2, 768 ** 2, 1024 ** 2, 1536 ** 2


def test_table_values():
    assert P.resolutions == (R384, R768, R1024, R1536)
    assert [P.accuracy(r) for r in P.resolutions] == [0.5963, 0.6436, 0.6711, 0.6796]
    assert [P.speed(r) for r in P.resolutions] == [23.8, 19.9, 19.7, 12.6]
    assert [P.payload_mb(r) for r in P.resolutions] == [0.42, 1.68, 2.99, 6.74]
    assert P.payload_mb(R768) == pytest.approx(0.42 * R768 / R384, abs=5e-3)


def test_proc_time():
    assert proc_time_s(P, R384, 20) == pytest.approx(0.84034, abs=1e-5)
    assert proc_time_s(P, R1536, 20) == pytest.approx(1.58730, abs=1e-5)
    assert proc_time_s(P, R1024, 0) == 0.0
    with pytest.raises(KeyError):
        proc_time_s(P, 1000, 20)


def test_payload_bits():
    assert payload_bits(P, R384, 1) == pytest.approx(3.36e6, rel=1e-12)
    assert payload_bits(P, R384, 2) == pytest.approx(6.72e6, rel=1e-12)
    assert payload_bits(P, R1536, 1) == pytest.approx(5.392e7, rel=1e-12)


def test_min_feasible():
    assert min_feasible_resolution(P, 0.60) == R768
    assert min_feasible_resolution(P, 0.67) == R1024
    assert min_feasible_resolution(P, 0.0) == R384
    with pytest.raises(InfeasibleAccuracy, match="C1"):
        min_feasible_resolution(P, 0.70, user_id=3)


@given(st.floats(0.0, 0.6796), st.floats(0.0, 0.6796))
def test_min_feasible_monotone(a, b):
    lo, hi = sorted((a, b))
    assert min_feasible_resolution(P, hi) >= min_feasible_resolution(P, lo)


def test_non_monotone_profile_rejected():
    rows = [ResolutionEntry("a", 100, 0.5, 10.0, 1.0), ResolutionEntry("b", 200, 0.4, 9.0, 2.0)]
    with pytest.raises(ProfileError):
        ResolutionProfile(tuple(rows))
    rows = [ResolutionEntry("a", 100, 0.5, 10.0, 1.0), ResolutionEntry("b", 200, 0.6, 0.0, 2.0)]
    with pytest.raises(ProfileError):
        ResolutionProfile(tuple(rows))


def test_profile_dict_roundtrip():
    assert ResolutionProfile.from_dict(P.to_dict()) == P
