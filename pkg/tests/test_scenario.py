import pytest

from vanetsim.mobility import kmh_to_mps
from vanetsim.scenario import (HEADER, PRESETS, ScenarioError, dump_scenario, dumps, load_scenario,
                               loads, preset)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    scn = preset(name)
    text = dumps(scn)
    assert text.startswith(HEADER)
    again = loads(text)
    assert again == scn
    assert dumps(again) == text


def test_paper_dissemination_values():
    scn = preset("paper-dissemination")
    assert scn.mobility.road_length == 10_000 and scn.mobility.mean_density == 36
    assert scn.radio.R == 250 and scn.radio.bandwidth == 1_000_000
    assert scn.units.lifetime == 50 and scn.units.target_span == 5000
    assert scn.run.warmup == 600 and scn.run.duration == 960


def test_paper_speedlimit_values():
    scn = preset("paper-speedlimit")
    assert scn.mobility.mean_density == 30
    assert scn.speedlimit.v_max_values == (105.0, 100.0)
    assert round(scn.mobility.road_length / 1000 * scn.mobility.mean_density) == 200


def test_desk_scale():
    scn = preset("desk")
    assert scn.mobility.road_length == 2000 and scn.run.duration == 300
    assert scn.mobility.mean_density == preset("paper-dissemination").mobility.mean_density


def _without(text, key):
    return "\n".join(l for l in text.splitlines() if not l.startswith(key + " ")) + "\n"


def test_missing_v_max_names_key():
    text = _without(dumps(preset("desk")), "v_max")
    with pytest.raises(ScenarioError) as exc:
        loads(text)
    assert exc.value.key == "v_max" and "v_max" in str(exc.value)
    assert exc.value.line == text.splitlines().index("[mobility]") + 1


def test_unknown_key_names_key_and_line():
    lines = dumps(preset("desk")).splitlines()
    at = lines.index("[radio]") + 1
    lines.insert(at, "antenna_gain = 3")
    with pytest.raises(ScenarioError) as exc:
        loads("\n".join(lines))
    assert exc.value.key == "antenna_gain" and exc.value.line == at + 1
    assert f"line {at + 1}" in str(exc.value)


def test_unknown_section_rejected():
    with pytest.raises(ScenarioError, match="weather"):
        loads(dumps(preset("desk")) + "\n[weather]\nrain = 1\n")


def test_bad_value_names_key():
    text = dumps(preset("desk")).replace("R = 250.0", "R = far")
    with pytest.raises(ScenarioError) as exc:
        loads(text)
    assert exc.value.key == "R" and exc.value.line is not None


def test_header_required():
    with pytest.raises(ScenarioError, match="line 1"):
        loads(dumps(preset("desk")).split("\n", 1)[1])


def test_invalid_params_rejected():
    text = dumps(preset("desk")).replace("driver_imperfection = 0.5", "driver_imperfection = 1.5")
    with pytest.raises(ScenarioError):
        loads(text)


def test_unknown_protocol_rejected():
    text = dumps(preset("desk")).replace("protocols = flooding,", "protocols = gossip,")
    with pytest.raises(ScenarioError, match="gossip"):
        loads(text)


def test_v_max_in_kmh(tmp_path):
    text = dumps(preset("desk")).replace("v_max = 105.0", "v_max = 100.0")
    p = tmp_path / "s.ini"
    p.write_text(text)
    assert load_scenario(p).mobility.v_max == kmh_to_mps(100)


def test_file_round_trip(tmp_path):
    scn = preset("hdc-jam")
    dump_scenario(scn, tmp_path / "h.ini")
    assert load_scenario(tmp_path / "h.ini") == scn


def test_unknown_preset():
    with pytest.raises(ScenarioError):
        preset("autobahn")
