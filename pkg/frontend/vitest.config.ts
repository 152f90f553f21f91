import { defineConfig } from 'vitest/config';

// The equivalence suite pushes thousands of requests through a child
// process and a Python reference run; give it room.
export default defineConfig({
    test: {
        testTimeout: 300_000,
        hookTimeout: 60_000,
    },
});
