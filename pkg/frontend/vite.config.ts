import { defineConfig } from "vite";

// The dev server proxies API calls to a locally running `balancekit serve`.
export default defineConfig({
  server: {
    proxy: {
      "/sessions": "http://127.0.0.1:8000",
    },
  },
});
