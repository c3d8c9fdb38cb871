package corpus;

public class BackoffTimer {
    private long delay = 100;

    public void pause() {
        long wait = delay * 2;
        Thread.sleep(wait);
        delay = wait;
    }
}
