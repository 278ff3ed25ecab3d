class Environment:
    """A 3x4 cliff-walking grid.

    Cells are numbered row * 4 + col. The agent starts in cell 8 (bottom left),
    the goal is cell 11 (bottom right) and cells 9 and 10 are the cliff.
    """

    def __init__(self):
        self.n_rows = 3
        self.n_cols = 4
        self.start = 8
        self.goal = 11
        self.cliff = {9, 10}
        self.state = self.start

    def set_state(self, state):
        self.state = int(state)

    def step(self, action):
        row, col = divmod(self.state, self.n_cols)
        if action == 0:
            row = max(row - 1, 0)
        elif action == 1:
            col = min(col + 1, self.n_cols - 1)
        elif action == 2:
            row = min(row + 1, self.n_rows - 1)
        elif action == 3:
            col = max(col - 1, 0)
        else:
            raise ValueError(f"invalid action {action}")
        nxt = row * self.n_cols + col
        if nxt in self.cliff:
            self.state = self.start
            return self.state, -100.0, False
        self.state = nxt
        return nxt, -1.0, nxt == self.goal
