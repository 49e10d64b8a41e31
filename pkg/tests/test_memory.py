import numpy as np
import pytest

from tgnseal.errors import CausalityError
from tgnseal.events import Event
from tgnseal.memory import (
    GruParams,
    IdentityEmbedding,
    MemoryState,
    RawMessageBuffer,
    TimeEncoderParams,
    TimeProjectionEmbedding,
    aggregate_messages,
    buffer_event,
    compute_messages,
    embed_identity,
    embed_time_projection,
    flush_batch,
    time_encode,
    update_memory,
)

D_MEM, D_TIME, F = 4, 3, 2


def zero_enc(d_time=D_TIME):
    return TimeEncoderParams(w=np.zeros(d_time), b=np.zeros(d_time))


def zero_gru(msg_dim=2 * D_MEM + D_TIME + F, d_mem=D_MEM):
    z = np.zeros
    return GruParams(
        wz=z((d_mem, msg_dim)), uz=z((d_mem, d_mem)), bz=z(d_mem),
        wr=z((d_mem, msg_dim)), ur=z((d_mem, d_mem)), br=z(d_mem),
        wn=z((d_mem, msg_dim)), un=z((d_mem, d_mem)), bn=z(d_mem),
    )


def event(src, dst, ts, feats=(0.0, 0.0), idx=0):
    return Event(idx=idx, src=src, dst=dst, ts=ts, feats=feats)


class TestTimeEncode:
    def test_zero_dt_zero_bias(self):
        assert np.array_equal(time_encode(0.0, zero_enc()), np.ones(D_TIME))

    def test_cos_pi(self):
        enc = TimeEncoderParams(w=np.array([np.pi]), b=np.array([0.0]))
        assert abs(time_encode(1.0, enc)[0] + 1.0) < 1e-15

    def test_shape(self):
        enc = TimeEncoderParams.init(16, np.random.default_rng(0))
        assert time_encode(3.7, enc).shape == (16,)

    def test_negative_dt_rejected(self):
        with pytest.raises(CausalityError):
            time_encode(-0.1, zero_enc())


class TestComputeMessages:
    def test_all_zero_state(self):
        mem = MemoryState(3, D_MEM)
        m_src, m_dst = compute_messages(event(0, 1, 0.0), mem, zero_enc())
        expect = np.concatenate([np.zeros(2 * D_MEM), np.ones(D_TIME), np.zeros(F)])
        assert np.array_equal(m_src.payload, expect)
        assert np.array_equal(m_dst.payload, expect)

    def test_payload_length(self):
        mem = MemoryState(3, D_MEM)
        m_src, _ = compute_messages(event(0, 1, 1.0, feats=(0.5, 1.0)), mem, zero_enc())
        assert m_src.payload.shape == (2 * D_MEM + D_TIME + F,)

    def test_src_dst_swap_memory_blocks(self):
        # direct construction oracle
        mem = MemoryState(3, D_MEM)
        mem.s[0] = np.arange(D_MEM)
        mem.s[1] = -np.arange(D_MEM)
        e = event(0, 1, 2.0, feats=(0.7, 0.0))
        m_src, m_dst = compute_messages(e, mem, zero_enc())
        assert np.array_equal(m_src.payload[:D_MEM], mem.s[0])
        assert np.array_equal(m_src.payload[D_MEM:2 * D_MEM], mem.s[1])
        assert np.array_equal(m_dst.payload[:D_MEM], mem.s[1])
        assert np.array_equal(m_dst.payload[D_MEM:2 * D_MEM], mem.s[0])

    def test_elapsed_time_per_endpoint(self):
        mem = MemoryState(3, D_MEM)
        mem.last_update[0] = 1.0
        mem.last_update[1] = 3.0
        enc = TimeEncoderParams(w=np.ones(1), b=np.zeros(1))
        m_src, m_dst = compute_messages(
            Event(idx=0, src=0, dst=1, ts=5.0, feats=()), mem, enc)
        assert abs(m_src.payload[2 * D_MEM] - np.cos(4.0)) < 1e-15
        assert abs(m_dst.payload[2 * D_MEM] - np.cos(2.0)) < 1e-15


class TestAggregate:
    def fill(self, buf, specs):
        for node, ts, val in specs:
            buf.push(node, ts, np.full(3, float(val)))

    def test_most_recent(self):
        buf = RawMessageBuffer()
        self.fill(buf, [(0, 1.0, 10), (0, 5.0, 50), (0, 3.0, 30)])
        assert aggregate_messages(buf, 0, "most_recent").payload[0] == 50.0

    def test_most_recent_tie_latest_arrival(self):
        buf = RawMessageBuffer()
        self.fill(buf, [(0, 5.0, 1), (0, 5.0, 2)])
        assert aggregate_messages(buf, 0, "most_recent").payload[0] == 2.0

    def test_single_message_both_modes(self):
        for mode in ("most_recent", "mean"):
            buf = RawMessageBuffer()
            self.fill(buf, [(0, 2.0, 7)])
            assert aggregate_messages(buf, 0, mode).payload[0] == 7.0

    def test_mean(self):
        buf = RawMessageBuffer()
        self.fill(buf, [(0, 1.0, 1), (0, 9.0, 3)])
        agg = aggregate_messages(buf, 0, "mean")
        assert np.array_equal(agg.payload, np.full(3, 2.0))
        assert agg.ts == 9.0

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            aggregate_messages(RawMessageBuffer(), 0)


def hand_gru(s, m, p):
    """Standalone evaluation of the three gate equations (test-side oracle)."""
    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))
    z = sig(p.wz @ m + p.uz @ s + p.bz)
    r = sig(p.wr @ m + p.ur @ s + p.br)
    n = np.tanh(p.wn @ m + p.un @ (r * s) + p.bn)
    return (1.0 - z) * n + z * s


class TestUpdateMemory:
    def test_zero_weights_halve_state(self):
        mem = MemoryState(2, D_MEM)
        mem.s[0] = np.array([2.0, -4.0, 6.0, 0.0])
        buf = RawMessageBuffer()
        buf.push(0, 1.0, np.zeros(2 * D_MEM + D_TIME + F))
        msg = aggregate_messages(buf, 0)
        new = update_memory(0, msg, mem, zero_gru())
        assert np.allclose(new, np.array([1.0, -2.0, 3.0, 0.0]))
        assert mem.last_update[0] == 1.0

    def test_zero_state_zero_weights(self):
        mem = MemoryState(2, D_MEM)
        buf = RawMessageBuffer()
        buf.push(0, 1.0, np.ones(2 * D_MEM + D_TIME + F))
        new = update_memory(0, aggregate_messages(buf, 0), mem, zero_gru())
        assert np.array_equal(new, np.zeros(D_MEM))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_hand_evaluation(self, seed):
        rng = np.random.default_rng(seed)
        msg_dim = 2 * D_MEM + D_TIME + F
        p = GruParams.init(msg_dim, D_MEM, rng)
        mem = MemoryState(2, D_MEM)
        mem.s[1] = rng.standard_normal(D_MEM)
        payload = rng.standard_normal(msg_dim)
        buf = RawMessageBuffer()
        buf.push(1, 4.2, payload)
        expect = hand_gru(mem.s[1].copy(), payload, p)
        got = update_memory(1, aggregate_messages(buf, 1), mem, p)
        assert np.allclose(got, expect, atol=1e-12)


class TestFlushBatch:
    def setup_method(self):
        self.rng = np.random.default_rng(7)
        self.msg_dim = 2 * D_MEM + D_TIME + F
        self.gru = GruParams.init(self.msg_dim, D_MEM, self.rng)
        self.enc = TimeEncoderParams.init(D_TIME, self.rng)

    def test_empty_buffer_no_change(self):
        mem = MemoryState(4, D_MEM)
        mem.s[:] = self.rng.standard_normal((4, D_MEM))
        before = mem.s.copy()
        flush_batch(RawMessageBuffer(), mem, self.gru)
        assert np.array_equal(mem.s, before)

    def test_only_touched_rows_change(self):
        # row-diff oracle: batch over nodes {0,1,2} changes exactly rows 0,1,2
        mem = MemoryState(5, D_MEM)
        mem.s[:] = self.rng.standard_normal((5, D_MEM))
        before = mem.s.copy()
        buf = RawMessageBuffer()
        buffer_event(buf, event(0, 1, 1.0), mem, self.enc)
        buffer_event(buf, event(1, 2, 2.0, idx=1), mem, self.enc)
        flush_batch(buf, mem, self.gru)
        changed = {i for i in range(5) if not np.array_equal(mem.s[i], before[i])}
        assert changed == {0, 1, 2}
        assert len(buf) == 0

    def test_most_recent_equivalence(self):
        # flushing all messages (most_recent) == flushing only each node's latest
        mem_a = MemoryState(4, D_MEM)
        mem_b = MemoryState(4, D_MEM)
        events = [event(0, 1, 1.0), event(0, 2, 2.0, idx=1), event(1, 2, 3.0, idx=2)]
        buf_a = RawMessageBuffer()
        for e in events:
            buffer_event(buf_a, e, mem_a, self.enc)
        flush_batch(buf_a, mem_a, self.gru, "most_recent")

        buf_b = RawMessageBuffer()
        latest = {}
        for e in events:
            from tgnseal.memory import compute_messages as cm
            m_src, m_dst = cm(e, mem_b, self.enc)
            latest[e.src] = (e.ts, m_src.payload)
            latest[e.dst] = (e.ts, m_dst.payload)
        for node, (ts, payload) in latest.items():
            buf_b.push(node, ts, payload)
        flush_batch(buf_b, mem_b, self.gru, "most_recent")
        assert np.array_equal(mem_a.s, mem_b.s)

    def test_determinism(self):
        def run():
            mem = MemoryState(6, D_MEM)
            buf = RawMessageBuffer()
            rng = np.random.default_rng(3)
            t = 0.0
            for i in range(40):
                t += float(rng.exponential(1.0))
                s = int(rng.integers(6))
                d = (s + 1 + int(rng.integers(5))) % 6
                buffer_event(buf, event(s, d, t, idx=i), mem, self.enc)
                if (i + 1) % 10 == 0:
                    flush_batch(buf, mem, self.gru)
            return mem.s.copy()
        assert np.array_equal(run(), run())


class TestEmbeddings:
    def test_identity_zero(self):
        mem = MemoryState(2, D_MEM)
        assert np.array_equal(embed_identity(0, mem), np.zeros(D_MEM))

    def test_identity_copies_row(self):
        mem = MemoryState(2, D_MEM)
        mem.s[1] = np.arange(D_MEM)
        z = embed_identity(1, mem)
        assert np.array_equal(z, mem.s[1])
        z[0] = 99.0  # a copy, not a view
        assert mem.s[1][0] == 0.0

    def test_identity_unaffected_by_other_rows(self):
        rng = np.random.default_rng(0)
        gru = GruParams.init(2 * D_MEM + D_TIME + F, D_MEM, rng)
        enc = TimeEncoderParams.init(D_TIME, rng)
        mem = MemoryState(4, D_MEM)
        before = embed_identity(3, mem)
        buf = RawMessageBuffer()
        buffer_event(buf, event(0, 1, 1.0), mem, enc)
        flush_batch(buf, mem, gru)
        assert np.array_equal(embed_identity(3, mem), before)

    def test_projection_zero_dt(self):
        mem = MemoryState(2, D_MEM)
        mem.s[0] = np.arange(D_MEM)
        proj = TimeProjectionEmbedding(D_MEM)
        proj.w.data[:] = 0.5
        assert np.array_equal(embed_time_projection(0, 0.0, mem, proj), mem.s[0])

    def test_projection_zero_weight(self):
        mem = MemoryState(2, D_MEM)
        mem.s[0] = np.arange(D_MEM)
        proj = TimeProjectionEmbedding(D_MEM)
        assert np.array_equal(embed_time_projection(0, 10.0, mem, proj), mem.s[0])

    def test_projection_arithmetic(self):
        mem = MemoryState(1, 2)
        mem.s[0] = np.array([1.0, 1.0])
        proj = TimeProjectionEmbedding(2)
        proj.w.data[:] = np.array([0.5, -0.5])
        z = embed_time_projection(0, 2.0, mem, proj)
        assert np.array_equal(z, np.array([2.0, 0.0]))

    def test_projection_causality(self):
        mem = MemoryState(1, 2)
        mem.last_update[0] = 5.0
        with pytest.raises(CausalityError):
            embed_time_projection(0, 4.0, mem, TimeProjectionEmbedding(2))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        mem = MemoryState(4, D_MEM)
        mem.s[:] = rng.standard_normal((4, D_MEM))
        mem.last_update[:] = [0.0, 1.0, 2.0, 3.0]
        proj = TimeProjectionEmbedding(D_MEM, rng)
        batch = proj.batch([2, 0, 3], 5.0, mem)
        for row, node in enumerate([2, 0, 3]):
            assert np.allclose(batch.data[row], proj.single(node, 5.0, mem))
        idb = IdentityEmbedding()
        got = idb.batch([1, 3], 5.0, mem)
        assert np.array_equal(got.data, mem.s[[1, 3]])
