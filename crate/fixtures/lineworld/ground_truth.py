class Environment:
    """A one-dimensional corridor of ten cells with the goal at the right end."""

    def __init__(self):
        self.n_positions = 10
        self.goal = 9
        self.position = 0

    def set_state(self, state):
        self.position = int(state)

    def step(self, action):
        if action == 1:
            self.position = min(self.position + 1, self.goal)
        elif action == 0:
            self.position = max(self.position - 1, 0)
        else:
            raise ValueError(f"invalid action {action}")
        done = self.position == self.goal
        reward = 1.0 if done else 0.0
        return self.position, reward, done
