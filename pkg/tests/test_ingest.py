import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmpo.errors import (
    AmbiguityError,
    ConsistencyError,
    EmptyInputError,
    IngestIOError,
    JoinError,
    ManifestError,
    MissingStatisticError,
    ParseError,
)
from nmpo.ingest import (
    DATA_READS,
    DATA_WRITES,
    ENERGY_PKG,
    ENERGY_RAM,
    ManifestEntry,
    NmcSimResult,
    PerfProfile,
    PerfSchema,
    RunSpec,
    assemble_run_records,
    format_perf_csv,
    format_ramulator_stats,
    load_corpus,
    load_manifest,
    parse_perf_csv,
    parse_ramulator_stats,
    write_manifest,
)

PERF = """# started on Mon
# run_count=5
0.5;s;duration_time;500000000;100.00;;
1234;;cache-misses;500000000;100.00;;
12.5;Joules;power/energy-pkg/;500000000;100.00;;
<not supported>;;power/energy-ram/;0;100.00;;
512;MiB;uncore_imc/data_reads/;500000000;100.00;;
512;MiB;uncore_imc/data_writes/;500000000;100.00;;
2000000;;instructions;;
1000000;;cycles;;
1000000000;;fp_arith_inst_retired.scalar_double;;
"""

STATS = """ramulator.cpu_cycles 1000
ramulator.ipc 0.5
ramulator.cpu_instructions 500
ramulator.total_time 800  # ns
"""
POWER = """Average Power: 150.0 mW
Total Trace Energy: 1.2e6 pJ
"""


def test_parse_perf_basic():
    p = parse_perf_csv(PERF)
    assert p.events["cache-misses"] == 1234
    assert p.events[ENERGY_PKG] == 12.5
    assert p.wall_time_s == 0.5
    assert p.run_count == 5
    assert ENERGY_RAM in p.missing
    assert not p.has(ENERGY_RAM)
    assert p.family("fp_arith") == {"fp_arith_inst_retired.scalar_double": 1e9}


def test_parse_perf_not_supported_is_missing_not_error():
    p = parse_perf_csv("0.1;s;duration_time;\n<not supported>;;power/energy-ram/;...\n")
    assert ENERGY_RAM in p.missing


def test_parse_perf_malformed_value_names_line():
    with pytest.raises(ParseError) as exc:
        parse_perf_csv("abc;;cycles;\n0.1;s;duration_time;\n")
    assert exc.value.line == 1
    assert "line 1" in str(exc.value)


def test_parse_perf_duplicate_is_ambiguity():
    with pytest.raises(AmbiguityError):
        parse_perf_csv("1;;cycles;\n2;;cycles;\n0.1;s;duration_time;\n")


@pytest.mark.parametrize("text", ["", "# only a comment\n", "\n\n"])
def test_parse_perf_empty(text):
    with pytest.raises(EmptyInputError):
        parse_perf_csv(text)


def test_parse_perf_missing_required_recorded():
    p = parse_perf_csv("0.1;s;duration_time;\n5;;cycles;\n")
    assert {ENERGY_PKG, DATA_READS, DATA_WRITES, "instructions"} <= p.missing
    assert "cycles" not in p.missing


def test_parse_perf_unit_normalization():
    p = parse_perf_csv("100;ms;duration_time;\n1500;mJ;power/energy-pkg/;\n2;GiB;uncore_imc/data_reads/;\n")
    assert p.wall_time_s == pytest.approx(0.1)
    assert p.events[ENERGY_PKG] == pytest.approx(1.5)
    assert p.events[DATA_READS] == 2048


def test_parse_perf_thousands_separator():
    p = parse_perf_csv("1,234,567;;cycles;\n0.1;s;duration_time;\n")
    assert p.events["cycles"] == 1234567


def test_parse_perf_requires_time():
    with pytest.raises(ParseError, match="duration_time"):
        parse_perf_csv("1;;cycles;\n")


def test_parse_perf_bytes_input():
    assert parse_perf_csv(PERF.encode()).events["cycles"] == 1e6


def test_format_perf_round_trip_bytes():
    canonical = format_perf_csv(parse_perf_csv(PERF))
    assert format_perf_csv(parse_perf_csv(canonical)) == canonical


event_names = st.from_regex(r"[a-z][a-z_./-]{0,20}", fullmatch=True).filter(lambda s: s != "duration_time")


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(event_names, st.floats(0, 1e15, allow_nan=False), max_size=8),
       st.floats(1e-6, 1e4), st.integers(1, 50))
def test_perf_round_trip_property(events, wall, runs):
    events = dict(events, duration_time=wall)
    prof = PerfProfile(events=events, wall_time_s=wall, run_count=runs, units={"duration_time": "s"})
    text = format_perf_csv(prof)
    back = parse_perf_csv(text, PerfSchema(required=()))
    assert back.events == events
    assert back.run_count == runs
    assert format_perf_csv(back) == text


def test_parse_ramulator_two_streams():
    sim = parse_ramulator_stats(STATS, POWER)
    assert sim.cpu_cycles == 1000
    assert sim.ipc == 0.5
    assert sim.cpu_instructions == 500
    assert sim.total_time_ns == 800
    assert sim.avg_power_mw == 150
    assert sim.trace_energy_pj == 1.2e6


def test_parse_ramulator_energy_units():
    sim = parse_ramulator_stats(STATS, "Average Power (W): 0.15\nTotal Trace Energy: 1.2 uJ\n")
    assert sim.avg_power_mw == pytest.approx(150)
    assert sim.trace_energy_pj == pytest.approx(1.2e6)


def test_parse_ramulator_missing_total_time():
    text = STATS.replace("ramulator.total_time 800  # ns\n", "")
    with pytest.raises(MissingStatisticError) as exc:
        parse_ramulator_stats(text, POWER)
    assert exc.value.missing == ["ramulator.total_time"]


def test_parse_ramulator_ipc_inconsistent():
    with pytest.raises(ConsistencyError):
        parse_ramulator_stats(STATS.replace("ipc 0.5", "ipc 0.7"), POWER)


def test_parse_ramulator_duplicate_across_streams():
    with pytest.raises(AmbiguityError):
        parse_ramulator_stats(STATS, POWER, "ramulator.ipc 0.5\n")


def test_parse_ramulator_malformed():
    with pytest.raises(ParseError):
        parse_ramulator_stats(STATS.replace("1000", "1e3x"), POWER)


def test_ramulator_round_trip():
    sim = parse_ramulator_stats(STATS, POWER)
    text = format_ramulator_stats(sim)
    assert parse_ramulator_stats(text) == sim
    assert format_ramulator_stats(parse_ramulator_stats(text)) == text


def test_runspec_validation():
    with pytest.raises(ValueError):
        RunSpec("atax", 0, 4000, 16)
    with pytest.raises(ValueError):
        RunSpec("atax", 1, 4000, 16, role="validate")
    assert RunSpec("atax", 1, 4000, 16).run_id == "atax/L1/T16"


def _write_run(tmp_path, name, perf=PERF):
    (tmp_path / f"{name}.csv").write_text(perf)
    (tmp_path / f"{name}.stats").write_text(STATS)
    (tmp_path / f"{name}.power").write_text(POWER)


def test_manifest_accepts_train_and_test_rows(tmp_path):
    _write_run(tmp_path, "a1")
    _write_run(tmp_path, "a8")
    doc = {"manifest_version": 1, "runs": [
        {"app": "atax", "dataset_level": 1, "dataset_param": 4000, "threads": 16, "role": "train",
         "perf": "a1.csv", "sim": ["a1.stats", "a1.power"]},
        {"app": "atax", "dataset_level": 8, "dataset_param": 17000, "threads": 16, "role": "test",
         "perf": "a8.csv", "sim": ["a8.stats", "a8.power"]},
    ]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    entries = load_manifest(tmp_path / "m.json")
    assert [e.spec.role for e in entries] == ["train", "test"]
    records = load_corpus(tmp_path / "m.json")
    assert records[1].spec.dataset_param == 17000
    assert records[0].nmc.ipc == 0.5


def test_manifest_duplicate_run(tmp_path):
    _write_run(tmp_path, "a1")
    run = {"app": "atax", "dataset_level": 1, "dataset_param": 4000, "threads": 16, "role": "train",
           "perf": "a1.csv"}
    (tmp_path / "m.json").write_text(json.dumps({"manifest_version": 1, "runs": [run, run]}))
    with pytest.raises(ManifestError, match="duplicates"):
        load_manifest(tmp_path / "m.json")


def test_manifest_dangling_file_names_run(tmp_path):
    run = {"app": "atax", "dataset_level": 2, "dataset_param": 4000, "threads": 16, "role": "train",
           "perf": "nope.csv"}
    (tmp_path / "m.json").write_text(json.dumps({"manifest_version": 1, "runs": [run]}))
    with pytest.raises(IngestIOError, match="atax/L2/T16"):
        load_manifest(tmp_path / "m.json")


@pytest.mark.parametrize("doc", [
    {"runs": []},
    {"manifest_version": 1, "runs": [{"app": "x"}]},
    {"manifest_version": 1, "runs": [{"app": "x", "dataset_level": "1", "dataset_param": 1, "threads": 1,
                                      "role": "train", "perf": "p"}]},
])
def test_manifest_schema_violation(tmp_path, doc):
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")


def test_manifest_missing_file(tmp_path):
    with pytest.raises(IngestIOError):
        load_manifest(tmp_path / "absent.json")


def test_manifest_write_read_round_trip(tmp_path):
    _write_run(tmp_path, "a1")
    spec = RunSpec("atax", 1, 4000, 16)
    write_manifest([ManifestEntry(spec, tmp_path / "a1.csv", (tmp_path / "a1.stats", tmp_path / "a1.power"))],
                   tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    entries = load_manifest(tmp_path / "m.json")
    write_manifest(entries, tmp_path / "m.json")
    assert (tmp_path / "m.json").read_text() == text


def test_assemble_join():
    spec = RunSpec("a", 1, 10, 8)
    prof = parse_perf_csv(PERF)
    sim = parse_ramulator_stats(STATS, POWER)
    recs = assemble_run_records([spec], {spec.key: prof}, {spec.key: sim})
    assert recs[0].nmc is sim
    recs = assemble_run_records([spec], {spec.key: prof})
    assert recs[0].nmc is None and recs[0].label is None
    other = RunSpec("b", 1, 10, 8)
    with pytest.raises(JoinError, match="b/L1/T8"):
        assemble_run_records([spec, other], {spec.key: prof})


def test_nmc_result_validation():
    with pytest.raises(ValueError):
        NmcSimResult(1000, 0.5, 500, -1, 1, 1)
