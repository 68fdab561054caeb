import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepmac.blocks import (
    DCF_GENOME,
    DOMAIN_SIZES,
    N_ACTIONS,
    SEGMENT_OFFSETS,
    STATE_WIDTH,
    BlockId,
    EncodingError,
    Genome,
    action_id,
    action_label,
    action_of,
    apply_action,
    catalog,
    catalog_json,
    decode,
    encode,
    enumerate_genomes,
)

genomes = st.tuples(*(st.integers(0, n - 1) for n in DOMAIN_SIZES)).map(Genome)


def test_catalog_domains():
    cat = catalog()
    assert cat[BlockId.BACKOFF].domain == ("off", "BEB", "EIED")
    assert cat[BlockId.DATA_RATE].values[1:] == (6, 9, 12, 24, 36, 48, 54)
    assert cat[BlockId.CONTENTION_WINDOW].values[1:] == (15, 31, 63, 127, 255, 511, 1023)
    assert cat[BlockId.BACKOFF].dependencies == (BlockId.ACK,)
    assert sum(s.size for s in cat) == 31
    assert DOMAIN_SIZES == (3, 2, 4, 2, 2, 8, 2, 8)


def test_catalog_is_stable():
    assert catalog() == catalog()
    assert catalog_json() == catalog_json()


def test_all_zeros_encoding():
    vec = encode(Genome.zeros()).as_array()
    assert vec.shape == (STATE_WIDTH,)
    assert np.flatnonzero(vec).tolist() == list(SEGMENT_OFFSETS)
    assert np.all(vec[31:] == 0)


def test_dcf_round_trip():
    assert decode(encode(DCF_GENOME).genome_onehot) == DCF_GENOME
    assert decode(encode(Genome.zeros()).genome_onehot) == Genome.zeros()


def test_history_is_left_padded_and_truncated():
    hist = encode(Genome.zeros(), [0.1, 0.2]).history
    assert hist[-2:].tolist() == [0.1, 0.2] and not hist[:-2].any()
    long = encode(Genome.zeros(), np.linspace(0, 1, 20)).history
    assert long.tolist() == np.linspace(0, 1, 20)[-15:].tolist()


@pytest.mark.parametrize("bad", [[-0.1], [1.5], [float("nan")]])
def test_history_out_of_range(bad):
    with pytest.raises(EncodingError):
        encode(Genome.zeros(), bad)


def test_decode_rejects_two_hot_bits():
    vec = encode(DCF_GENOME).genome_onehot.copy()
    vec[SEGMENT_OFFSETS[BlockId.ACK]] = 1.0
    with pytest.raises(EncodingError):
        decode(vec)
    with pytest.raises(EncodingError):
        decode(np.zeros(31))


def test_out_of_range_genome_entry():
    with pytest.raises(EncodingError):
        Genome((3, 0, 0, 0, 0, 0, 0, 0))
    with pytest.raises(EncodingError):
        Genome((0,) * 7)


def test_enumeration_exhaustive_bijection():
    seen = set()
    for i, g in enumerate(enumerate_genomes()):
        if i == 0:
            assert g == Genome.zeros()
        enc = encode(g).genome_onehot
        assert enc.sum() == 8
        assert decode(enc) == g
        seen.add(g)
    assert i + 1 == 12_288 == len(seen)


def test_parse_and_labels():
    g = Genome.parse("BEB,ACK,off,off,off,15,on,54")
    assert g == DCF_GENOME
    assert str(g) == "BEB,ACK,off,off,off,15,on,54"
    assert g.value(BlockId.DATA_RATE) == 54 and g.value(BlockId.FRAGMENTATION) is None
    assert g.active_blocks() == [BlockId.BACKOFF, BlockId.ACK, BlockId.CONTENTION_WINDOW,
                                 BlockId.CARRIER_SENSE, BlockId.DATA_RATE]
    with pytest.raises(EncodingError):
        Genome.parse("BEB,ACK,off,off,off,16,on,54")


@given(genomes)
def test_string_round_trip(g):
    assert Genome.parse(str(g)) == g


def test_action_ids_cover_the_one_hot_layout():
    assert N_ACTIONS == 31
    for a in range(N_ACTIONS):
        block, variant = action_of(a)
        assert action_id(block, variant) == a
    assert action_label(action_id(BlockId.BACKOFF, 1)) == "backoff=BEB"
    with pytest.raises(EncodingError):
        action_of(31)


@given(genomes, genomes)
def test_any_genome_reachable_in_eight_steps(src, dst):
    g = src
    steps = 0
    for block in BlockId:
        if g[block] != dst[block]:
            g = apply_action(g, action_id(block, dst[block]))
            steps += 1
    assert g == dst and steps <= 8


@given(genomes, st.integers(0, N_ACTIONS - 1))
def test_apply_action_touches_one_block(g, a):
    block, variant = action_of(a)
    out = apply_action(g, a)
    assert out[block] == variant
    assert sum(x != y for x, y in zip(g.values, out.values)) <= 1
