import pytest
from hypothesis import given, settings, strategies as st

from qswitch.topology import (
    DPHD42,
    SPHD20,
    Channel,
    Direction,
    InvalidParams,
    NodeKind,
    ParseError,
    QFlyParams,
    UnknownNode,
    ValidationError,
    build,
    generate_qfly,
    load_topology,
    neighbors,
    serialize_topology,
    validate,
)


@pytest.mark.parametrize("params,ends,switches,bsas", [
    (SPHD20, 20, 5, 10),
    (DPHD42, 42, 7, 21),
])
def test_preset_counts(params, ends, switches, bsas):
    topo = generate_qfly(params)
    assert topo.counts() == {NodeKind.END_NODE: ends, NodeKind.SWITCH: switches, NodeKind.BSA: bsas}
    assert validate(topo) == []


def test_preset_names():
    assert generate_qfly(SPHD20).name == "SPHD-20"
    assert generate_qfly(DPHD42).name == "DPHD-42"


def test_group_sizes_even_split():
    assert SPHD20.group_sizes() == [4, 4, 4, 4, 4]
    assert DPHD42.group_sizes() == [6] * 7
    assert QFlyParams(3, 5, 1, n_override=7).group_sizes() == [3, 2, 2]


def test_dphd_switch_neighbors():
    topo = generate_qfly(DPHD42)
    sw = topo.switches[0]
    adj = neighbors(topo, sw)
    # 6 end nodes, 3 BSAs on two ports each, 6 peer switches
    assert len(adj) == 18
    assert len({a.neighbor for a in adj}) == 15
    kinds = [topo.kind(a.neighbor) for a in adj]
    assert kinds.count(NodeKind.END_NODE) == 6
    assert kinds.count(NodeKind.BSA) == 6
    assert kinds.count(NodeKind.SWITCH) == 6
    assert all(a.direction is Direction.OUT for a in adj if topo.kind(a.neighbor) is NodeKind.BSA)
    assert all(a.direction is Direction.BOTH for a in adj if topo.kind(a.neighbor) is not NodeKind.BSA)


def test_neighbors_unknown_node():
    with pytest.raises(UnknownNode):
        neighbors(generate_qfly(SPHD20), 999)


def test_neighbors_order(chain5_topo):
    adj = neighbors(chain5_topo, 3)
    assert [(a.neighbor, a.local_port) for a in adj] == [(1, 0), (2, 1), (4, 2), (4, 3)]


@pytest.mark.parametrize("params", [SPHD20, DPHD42, QFlyParams(1, 2, 1)])
def test_round_trip(params):
    topo = generate_qfly(params)
    text = serialize_topology(topo)
    again = load_topology(text)
    assert again == topo
    assert serialize_topology(again) == text


def test_generation_is_deterministic():
    a = generate_qfly.__wrapped__(DPHD42)
    b = generate_qfly.__wrapped__(DPHD42)
    assert serialize_topology(a) == serialize_topology(b)


def test_qfly_wiring_is_symmetric():
    topo = generate_qfly(SPHD20)
    chans = set(topo.channels)
    for ch in topo.channels:
        if topo.kind(ch.dst) is not NodeKind.BSA:
            assert Channel(ch.dst, ch.dst_port, ch.src, ch.src_port) in chans
    for b in topo.bsas:
        assert sorted(ch.dst_port for ch in topo.in_channels[b]) == [0, 1]
        assert topo.out_channels[b] == ()


@pytest.mark.parametrize("bad", [
    QFlyParams(0, 5, 2),
    QFlyParams(2, 0, 1),
    QFlyParams(2, 2, 0),
    QFlyParams(2, 2, 1, n_override=5),
])
def test_invalid_params(bad):
    with pytest.raises(InvalidParams):
        generate_qfly(bad)


def test_parse_error_position():
    text = "node 0 endnode\nnode 1 switch\n  channel 0:x -> 1:0\n"
    with pytest.raises(ParseError) as err:
        load_topology(text)
    assert err.value.line == 3
    assert err.value.column == 13


def test_parse_error_unknown_kind():
    with pytest.raises(ParseError) as err:
        load_topology("node 0 router\n")
    assert err.value.line == 1
    assert "router" in str(err.value)


def test_parse_error_unknown_statement():
    with pytest.raises(ParseError):
        load_topology("link 0 1\n")


def test_validation_collects_every_problem():
    text = "\n".join([
        "node 0 endnode",
        "node 1 switch",
        "node 2 bsa",
        "channel 0:0 -> 1:0",
        "channel 1:1 -> 2:0",
        "channel 1:2 -> 9:0",
        "channel 0:0 -> 1:3",
    ])
    with pytest.raises(ValidationError) as err:
        load_topology(text)
    joined = " | ".join(err.value.violations)
    assert "unknown node 9" in joined
    assert "0:0 has more than one outbound" in joined


def test_validation_bsa_ports():
    with pytest.raises(ValidationError) as err:
        build([(0, NodeKind.SWITCH), (1, NodeKind.BSA)], [(0, 0, 1, 0, "->")])
    assert any("exactly 2 inbound" in v for v in err.value.violations)
    with pytest.raises(ValidationError):
        build([(0, NodeKind.SWITCH), (1, NodeKind.BSA)], [(0, 0, 1, 0, "->"), (0, 1, 1, 1)])


def test_comments_and_name(chain5_topo):
    assert chain5_topo.name == "chain5"
    assert chain5_topo.end_nodes == [0, 1]
    assert chain5_topo.bsas == [4]


def test_disconnected_topology_is_valid():
    topo = build([(0, NodeKind.END_NODE), (1, NodeKind.END_NODE)], [])
    assert topo.hop_distances(0) == {0: 0}


@settings(max_examples=40, deadline=None)
@given(g=st.integers(1, 6), p=st.integers(1, 6), b=st.integers(1, 3), data=st.data())
def test_qfly_properties(g, p, b, data):
    n = data.draw(st.integers(0, g * p))
    params = QFlyParams(g, p, b, n_override=n)
    topo = generate_qfly(params)
    assert validate(topo) == []
    counts = topo.counts()
    assert counts[NodeKind.END_NODE] == n
    assert counts[NodeKind.SWITCH] == g
    assert counts[NodeKind.BSA] == g * b
    # every switch peers with every other switch
    for sw in topo.switches:
        peers = {a.neighbor for a in neighbors(topo, sw) if topo.kind(a.neighbor) is NodeKind.SWITCH}
        assert peers == set(topo.switches) - {sw}
    assert load_topology(serialize_topology(topo)) == topo
