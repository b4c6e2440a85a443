import numpy as np
from racelab.dynamics import drone_4s
from racelab.track import load_track
import racelab.rl.env as E
from racelab.rl.train import _bias_thrust_head
from racelab.rl.nets import GaussianPolicy, ValueNet, NormStats
from racelab.rl.ppo import PpoConfig, PpoOptimizer, RolloutBatch

track = load_track('splits')
params = drone_4s()


class FixedSpawnEnv(E.VecRaceEnv):
    def _sample_fresh(self, rng):
        gate = self.ta.centers[0]
        pos = gate - 3.0 * self.ta.normals[0] + rng.uniform(-0.3, 0.3, size=3)
        delta = gate - pos
        yaw = np.arctan2(delta[1], delta[0])
        return self._hover_row(pos, yaw), 0


rng = np.random.default_rng(1)
import sys
out_gain = float(sys.argv[1]) if len(sys.argv) > 1 else 0.01
mbs = int(sys.argv[2]) if len(sys.argv) > 2 else 8
iters = int(sys.argv[3]) if len(sys.argv) > 3 else 40
sigma0 = float(sys.argv[4]) if len(sys.argv) > 4 else 0.5
policy = GaussianPolicy(36, 4, 256, rng, init_log_std=float(np.log(sigma0)))
if len(sys.argv) > 5 and sys.argv[5] == 'perdim':
    policy.log_std[:] = np.log([0.15, 0.5, 0.5, 0.5])
from racelab.rl.nets import orthogonal_init
policy.mlp.params['w2'] = orthogonal_init(rng, (256, 4), out_gain)
_bias_thrust_head(policy, params)
value = ValueNet(36, 256, rng)
norm = NormStats(36)
opt = PpoOptimizer(policy, value, PpoConfig())
env = FixedSpawnEnv(track, params, 100, seed=2, delay_s=0.0, laps_required=1,
                    episode_cap_s=5.0, init_buffer=E.InitStateBuffer(4096))
arng = np.random.default_rng(777)
urng = np.random.default_rng(999)
obs_raw = env.reset_all()
T = 250
for it in range(iters):
    bufs = {k: [] for k in ['obs', 'act', 'logp', 'rew', 'val', 'done']}
    crash = fin = passes = 0
    for t in range(T):
        norm.update(obs_raw)
        o = norm.normalize(obs_raw)
        a, lp, _ = policy.act(o, arng)
        v = value(o)
        obs_raw, r, d, info = env.step(a)
        crash += info['crashed'].sum()
        fin += info['finished'].sum()
        passes += info['passed'].sum()
        bufs['obs'].append(o)
        bufs['act'].append(a)
        bufs['logp'].append(lp)
        bufs['rew'].append(r)
        bufs['val'].append(v)
        bufs['done'].append(d)
    batch = RolloutBatch(np.array(bufs['obs']), np.array(bufs['act']), np.array(bufs['logp']),
                         np.array(bufs['rew']), np.array(bufs['val']), np.array(bufs['done']),
                         np.zeros((T, 100), dtype=int), value(norm.normalize(obs_raw)))
    stats = opt.update(batch, urng)
    rets, lens = env.drain_episode_stats()
    print(f'it={it} rew={np.mean(rets) if rets else 0:7.2f} crash={crash} fin={fin} '
          f'passes={passes} buf={env.buffer.size}', flush=True)
