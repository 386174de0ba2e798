import { ApiClient } from './api.js';
import { ReviewApp } from './app.js';

const root = document.getElementById('app');
if (!root) {
  throw new Error('missing #app container');
}
const reviewer = new URLSearchParams(window.location.search).get('reviewer') ?? 'reviewer';
const app = new ReviewApp(root, new ApiClient(), reviewer);
void app.start();
