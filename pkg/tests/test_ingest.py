import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evmarket.ingest import (DUNDEE_COLUMNS, IngestError, TransactionRecord, encode,
                             parse_locations, parse_transactions, split, station_ids,
                             synth_generate, write_locations, write_transactions)

HEADER = "cs_id,tx_id,date,time,energy_kwh\n"


def _write(tmp_path, text, name="tx.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_header_only_file_gives_empty_list(tmp_path):
    assert parse_transactions(_write(tmp_path, HEADER), ["A"]) == []


def test_negative_energy_reports_row(tmp_path):
    p = _write(tmp_path, HEADER + "A,t1,2018-01-01,10:00,1.0\nA,t2,2018-01-02,11:00,-3.2\n")
    with pytest.raises(IngestError) as err:
        parse_transactions(p, ["A"])
    assert err.value.row == 3


def test_two_rows_preserve_order(tmp_path):
    p = _write(tmp_path, HEADER + "B,t1,2018-01-01,10:00,1.5\nA,t2,2018-01-02,23:59,2.0\n")
    recs = parse_transactions(p, ["A", "B"])
    assert [r.tx_id for r in recs] == ["t1", "t2"]
    assert recs[1].start_time == dt.time(23, 59)


@pytest.mark.parametrize("row", ["A,t1,2018-13-01,10:00,1.0", "C,t1,2018-01-01,10:00,1.0",
                                 "A,t1,2018-01-01,25:00,1.0", "A,t1,2018-01-01,10:00,abc"])
def test_malformed_rows_raise_with_row_number(tmp_path, row):
    with pytest.raises(IngestError, match="row 2"):
        parse_transactions(_write(tmp_path, HEADER + row + "\n"), ["A"])


def test_missing_file_and_missing_columns(tmp_path):
    with pytest.raises(IngestError):
        parse_transactions(tmp_path / "nope.csv", ["A"])
    with pytest.raises(IngestError, match="row 1"):
        parse_transactions(_write(tmp_path, "cs_id,date\n"), ["A"])


def test_dundee_column_map(tmp_path):
    text = ("CP ID,Charging event,Start Date,Start Time,Total kWh\n"
            "50911,7,01/03/2018,09:15,12.4\n")
    recs = parse_transactions(_write(tmp_path, text), ["50911"], DUNDEE_COLUMNS, "%d/%m/%Y")
    assert recs[0].date == dt.date(2018, 3, 1) and recs[0].energy_kwh == 12.4


def test_record_rejects_negative_energy():
    with pytest.raises(ValueError):
        TransactionRecord("A", "t", dt.date(2018, 1, 1), dt.time(1, 0), -0.1)


def test_encode_index_mapping_58_stations():
    reg = station_ids(58)
    # 2018-01-02 is a Tuesday
    rec = TransactionRecord(reg[6], "t", dt.date(2018, 1, 2), dt.time(13, 0), 5.0)
    ds = encode([rec], reg)
    assert ds.features.shape == (1, 89)
    assert sorted(np.flatnonzero(ds.features[0])) == [6, 58 + 1, 58 + 7 + 13]
    assert ds.labels[0] == 5.0


def test_encode_identical_records_identical_rows_and_width_one_station():
    rec = TransactionRecord("A", "t", dt.date(2018, 5, 5), dt.time(7, 30), 3.0)
    ds = encode([rec, rec], ["A"])
    assert ds.features.shape[1] == 32
    assert np.array_equal(ds.features[0], ds.features[1])


records_strategy = st.lists(
    st.tuples(st.integers(0, 4), st.dates(dt.date(2000, 1, 1), dt.date(2030, 1, 1)),
              st.integers(0, 23), st.integers(0, 59), st.floats(0, 1e3)),
    min_size=1, max_size=40)


@given(records_strategy)
@settings(max_examples=60, deadline=None)
def test_one_hot_blocks_sum_to_one(rows):
    reg = [f"S{k}" for k in range(5)]
    recs = [TransactionRecord(reg[s], "t", d, dt.time(h, m), e) for s, d, h, m, e in rows]
    ds = encode(recs, reg)
    assert ds.features.shape[1] == len(reg) + 31
    for _, lo, hi in ds.layout.blocks():
        assert np.all(ds.features[:, lo:hi].sum(axis=1) == 1.0)


def _dataset(n):
    recs = [TransactionRecord("A", f"t{k}", dt.date(2018, 1, 1) + dt.timedelta(days=k),
                              dt.time(k % 24, 0), float(k)) for k in range(n)]
    return encode(recs, ["A"])


def test_split_sizes_and_determinism():
    ds = _dataset(10)
    tr, te = split(ds, 0.8, 3)
    assert (len(tr), len(te)) == (8, 2)
    tr2, te2 = split(ds, 0.8, 3)
    assert np.array_equal(tr.labels, tr2.labels) and np.array_equal(te.labels, te2.labels)
    with pytest.raises(ValueError):
        split(ds, 1.0, 0)


@given(st.integers(1, 60), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_split_partition_property(n, ratio, seed):
    ds = _dataset(n)
    tr, te = split(ds, ratio, seed)
    assert len(tr) == int(np.floor(ratio * n))
    labels = np.concatenate([tr.labels, te.labels])
    assert sorted(labels.tolist()) == sorted(ds.labels.tolist())


def test_synth_generate_reproducible_and_covering(tmp_path):
    a = synth_generate(7, 6, 600)
    b = synth_generate(7, 6, 600)
    assert a == b
    recs, locs = a
    assert len(recs) == 600 and {r.cs_id for r in recs} == set(station_ids(6))
    assert len(locs) == 6 and all(56.44 <= s.latitude <= 56.49 for s in locs)
    sums = {cs: sum(r.energy_kwh for r in recs if r.cs_id == cs) for cs in station_ids(6)}
    assert all(v > 0 for v in sums.values())
    write_transactions(recs, tmp_path / "a.csv")
    write_transactions(b[0], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_write_parse_round_trip(tmp_path):
    recs, locs = synth_generate(1, 3, 50)
    write_transactions(recs, tmp_path / "t.csv")
    write_locations(locs, tmp_path / "l.csv")
    assert parse_transactions(tmp_path / "t.csv", station_ids(3)) == recs
    back = parse_locations(tmp_path / "l.csv")
    assert [s.cs_id for s in back] == station_ids(3)
    d1 = encode(recs, station_ids(3))
    d2 = encode(parse_transactions(tmp_path / "t.csv", station_ids(3)), station_ids(3))
    assert np.array_equal(d1.features, d2.features) and np.array_equal(d1.labels, d2.labels)


def test_synth_station_means_differ():
    recs, _ = synth_generate(0, 6, 6000)
    means = [np.mean([r.energy_kwh for r in recs if r.cs_id == cs]) for cs in station_ids(6)]
    assert np.ptp(means) > 1.0
