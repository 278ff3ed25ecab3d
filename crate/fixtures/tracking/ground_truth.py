class Environment:
    """Follow a fixed sequence of setpoints with a bounded scalar control."""

    def __init__(self):
        self.targets = [0.5, -1.0, 1.5, 0.0, -0.5, 1.0, -1.5, 0.25, 0.75, -0.25]
        self.t = 0

    def set_state(self, state):
        self.t = int(round(state[0]))

    def step(self, action):
        u = min(max(float(action[0]), -2.0), 2.0)
        reward = -((u - self.targets[self.t]) ** 2)
        self.t += 1
        done = self.t == len(self.targets)
        return [float(self.t)], reward, done
