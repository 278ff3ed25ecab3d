class Environment:
    def __init__(self):
        self.position = 0

    def set_state(self, state):
        self.position = int(state)

    def step(self, action):
        if action == 1:
            self.position = min(self.position + 1, 9)
        else:
            self.position = max(self.position - 1, 0)
        return self.position, 0.0, False
