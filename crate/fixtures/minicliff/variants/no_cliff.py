class Environment:
    def __init__(self):
        self.state = 8

    def set_state(self, state):
        self.state = int(state)

    def step(self, action):
        row, col = divmod(self.state, 4)
        if action == 0:
            row = max(row - 1, 0)
        elif action == 1:
            col = min(col + 1, 3)
        elif action == 2:
            row = min(row + 1, 2)
        elif action == 3:
            col = max(col - 1, 0)
        self.state = row * 4 + col
        return self.state, -1.0, self.state == 11
